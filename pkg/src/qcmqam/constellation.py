"""Construction and labeling of QCM-QAM, SP-QAM and PM-M-QAM formats.

All 4D formats are stored as point arrays of shape ``(N, 4)`` with columns
``[x_I, x_Q, y_I, y_Q]`` and label arrays of shape ``(N, log2(N))`` holding
0/1 entries, most significant bit first.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

_DECIMALS = 9


def gray_code(n_bits: int) -> np.ndarray:
    """Binary-reflected Gray code as integers, in code order."""
    k = np.arange(2**n_bits)
    return k ^ (k >> 1)


def int_to_bits(values, n_bits: int) -> np.ndarray:
    values = np.asarray(values, dtype=np.int64)
    shifts = np.arange(n_bits - 1, -1, -1)
    return ((values[..., None] >> shifts) & 1).astype(np.uint8)


def bits_to_int(bits) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.int64)
    weights = 1 << np.arange(bits.shape[-1] - 1, -1, -1)
    return bits @ weights


@dataclass(frozen=True, eq=False)
class Constellation2D:
    """Labeled 2D constellation for one polarization.

    ``points`` has shape ``(M, 2)``; ``labels`` has shape ``(M, m)``.
    """

    points: np.ndarray
    labels: np.ndarray
    name: str = ""

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        lab = np.asarray(self.labels, dtype=np.uint8)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError("points must have shape (M, 2)")
        if lab.shape[0] != pts.shape[0]:
            raise ValueError("points and labels differ in length")
        M = pts.shape[0]
        if M < 2 or M & (M - 1):
            raise ValueError(f"constellation size {M} is not a power of two")
        if lab.shape[1] != M.bit_length() - 1:
            raise ValueError("label width must equal log2(M)")
        if len(np.unique(bits_to_int(lab))) != M:
            raise ValueError("labels are not distinct")
        pts.flags.writeable = False
        lab.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "labels", lab)

    @property
    def M(self) -> int:
        return self.points.shape[0]

    @property
    def m(self) -> int:
        return self.labels.shape[1]

    @property
    def energies(self) -> np.ndarray:
        return np.sum(self.points**2, axis=1)

    def normalize(self) -> "Constellation2D":
        scale = np.sqrt(np.mean(self.energies))
        return Constellation2D(self.points / scale, self.labels, self.name)


@dataclass(frozen=True)
class ShellPartition:
    """Equal-size split of a 2D constellation into low- and high-energy points."""

    inner: np.ndarray
    outer: np.ndarray


@dataclass(frozen=True, eq=False)
class ProductStructure:
    """Factorization of a 4D format into an X-polarization set and Y-classes.

    Every 4D point pairs an X point ``a`` with a Y point drawn from the class
    ``x_class[a]``; its label is ``[x_labels[a] | class_labels[c][j]]``. The
    demappers use this to evaluate bit-wise likelihood sums in ``O(M m)``
    per received symbol instead of ``O(N)``.
    """

    x_points: np.ndarray  # (A, 2)
    x_labels: np.ndarray  # (A, mx)
    x_class: np.ndarray  # (A,)
    y_points: np.ndarray  # (B, 2)
    class_members: tuple  # per class: indices into y_points
    class_labels: tuple  # per class: (len(members), my) label bits
    point_x: np.ndarray  # (N,) index into x_points
    point_y: np.ndarray  # (N,) index into y_points

    @property
    def n_classes(self) -> int:
        return len(self.class_members)

    @property
    def mx(self) -> int:
        return self.x_labels.shape[1]

    @property
    def my(self) -> int:
        return self.class_labels[0].shape[1]


@dataclass(frozen=True, eq=False)
class LabeledConstellation4D:
    """A labeled dual-polarization (4D) constellation."""

    points: np.ndarray
    labels: np.ndarray
    name: str = ""
    structure: ProductStructure | None = field(default=None, repr=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        lab = np.asarray(self.labels, dtype=np.uint8)
        if pts.ndim != 2 or pts.shape[1] != 4:
            raise ValueError("points must have shape (N, 4)")
        N = pts.shape[0]
        if N < 2 or N & (N - 1):
            raise ValueError(f"constellation size {N} is not a power of two")
        if lab.shape != (N, N.bit_length() - 1):
            raise ValueError("labels must have shape (N, log2(N))")
        if len(np.unique(bits_to_int(lab))) != N:
            raise ValueError("labels are not distinct")
        pts.flags.writeable = False
        lab.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "labels", lab)
        if self.structure is None:
            object.__setattr__(self, "structure", infer_structure(pts, lab))

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def bits_per_symbol(self) -> int:
        return self.labels.shape[1]

    @property
    def spectral_efficiency(self) -> int:
        """Bits per 4D symbol."""
        return self.labels.shape[1]

    @property
    def energies(self) -> np.ndarray:
        return np.sum(self.points**2, axis=1)

    @property
    def label_index(self) -> np.ndarray:
        """Point index for every integer label value."""
        inv = np.empty(len(self), dtype=np.int64)
        inv[bits_to_int(self.labels)] = np.arange(len(self))
        return inv

    def normalize(self) -> "LabeledConstellation4D":
        scale = np.sqrt(np.mean(self.energies))
        st = self.structure
        if st is not None:
            st = ProductStructure(
                st.x_points / scale, st.x_labels, st.x_class, st.y_points / scale,
                st.class_members, st.class_labels, st.point_x, st.point_y,
            )
        return LabeledConstellation4D(self.points / scale, self.labels, self.name, st)

    def permuted(self, order) -> "LabeledConstellation4D":
        """Same (point, label) pairs in a different storage order."""
        order = np.asarray(order)
        return LabeledConstellation4D(self.points[order], self.labels[order], self.name)

    def relabeled(self, labels, name: str | None = None) -> "LabeledConstellation4D":
        return LabeledConstellation4D(self.points, labels, name or self.name)

    def rotated(self, phase: float) -> "LabeledConstellation4D":
        """Apply a common phase rotation to both polarizations."""
        c = self.points[:, 0::2] + 1j * self.points[:, 1::2]
        c = c * np.exp(1j * phase)
        pts = np.stack([c[:, 0].real, c[:, 0].imag, c[:, 1].real, c[:, 1].imag], axis=1)
        return LabeledConstellation4D(pts, self.labels, self.name)

    def complex_points(self) -> np.ndarray:
        """Points as an ``(N, 2)`` complex array (X, Y)."""
        return self.points[:, 0::2] + 1j * self.points[:, 1::2]


# ---------------------------------------------------------------------------
# 2D building blocks


def _square_qam(m: int):
    L = 2 ** (m // 2)
    g = gray_code(m // 2)
    levels = np.arange(-(L - 1), L, 2)
    ii, qq = np.meshgrid(np.arange(L), np.arange(L), indexing="ij")
    ii, qq = ii.ravel(), qq.ravel()
    pts = np.stack([levels[ii], levels[qq]], axis=1)
    labels = np.concatenate([int_to_bits(g[ii], m // 2), int_to_bits(g[qq], m // 2)], axis=1)
    return pts.astype(float), labels


def _cross_qam(m: int):
    # Gray-labeled 2^a x 2^b rectangle with the outer columns folded onto the
    # top and bottom rows (a = b + 1). Folding maps
    # (I, Q) -> (sign(I) (2^b - |Q|), sign(Q) (3 * 2^b - |I|)).
    b = (m - 1) // 2
    a = b + 1
    gI, gQ = gray_code(a), gray_code(b)
    lvI = np.arange(-(2**a - 1), 2**a, 2)
    lvQ = np.arange(-(2**b - 1), 2**b, 2)
    ii, qq = np.meshgrid(np.arange(2**a), np.arange(2**b), indexing="ij")
    ii, qq = ii.ravel(), qq.ravel()
    I, Q = lvI[ii].copy(), lvQ[qq].copy()
    labels = np.concatenate([int_to_bits(gI[ii], a), int_to_bits(gQ[qq], b)], axis=1)
    if m > 3:
        edge = 3 * 2 ** (b - 1) - 1
        moved = np.abs(I) > edge
        I2 = np.sign(I) * (2**b - np.abs(Q))
        Q2 = np.sign(Q) * (3 * 2**b - np.abs(I))
        I = np.where(moved, I2, I)
        Q = np.where(moved, Q2, Q)
    pts = np.stack([I, Q], axis=1).astype(float)
    return pts, labels


def build_pm_qam(m: int) -> Constellation2D:
    """Gray-labeled ``2^m``-QAM, unit average energy.

    Square grid for even ``m``; for odd ``m`` a cross constellation with
    quasi-Gray labels (``m = 3`` gives the 8-point rectangle).
    """
    if not isinstance(m, (int, np.integer)) or m < 2:
        raise ValueError(f"unsupported bits per 2D symbol: {m!r}")
    if m % 2 == 0:
        pts, labels = _square_qam(m)
    else:
        pts, labels = _cross_qam(m)
    return Constellation2D(pts, labels, f"{2**m}QAM").normalize()


def lattice_coordinates(points: np.ndarray) -> np.ndarray:
    """Integer lattice indices of QAM coordinates (odd-integer grid -> Z)."""
    pts = np.asarray(points, dtype=float)
    # recover the odd-integer grid from the normalized points
    nz = np.abs(pts[np.abs(pts) > 1e-12])
    unit = nz.min()
    grid = np.rint(pts / unit).astype(np.int64)
    if np.any(grid % 2 == 0):
        raise ValueError("points are not on an odd-integer QAM grid")
    return (grid + 1) // 2


def split_shells(c: Constellation2D) -> ShellPartition:
    """Split into the ``M/2`` lowest-energy (inner) and highest-energy (outer) points.

    Ties are broken by (first coordinate, second coordinate) so the result
    does not depend on storage order or platform.
    """
    if c.M % 2:
        raise ValueError("shell split requires an even number of points")
    e = np.round(c.energies, _DECIMALS)
    p = np.round(c.points, _DECIMALS)
    order = np.lexsort((p[:, 1], p[:, 0], e))
    half = c.M // 2
    return ShellPartition(np.sort(order[:half]), np.sort(order[half:]))


def angle_radius_gray_labels(points: np.ndarray) -> np.ndarray:
    """Gray labels assigned along an (angle, radius) ordering of ``points``.

    Returns an array of shape ``(len(points), log2(len(points)))``.
    """
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    k = n.bit_length() - 1
    if n != 2**k:
        raise ValueError("subset size must be a power of two")
    ang = np.round(np.mod(np.arctan2(pts[:, 1], pts[:, 0]), 2 * np.pi), _DECIMALS)
    rad = np.round(np.hypot(pts[:, 0], pts[:, 1]), _DECIMALS)
    order = np.lexsort((rad, ang))
    labels = np.empty((n, k), dtype=np.uint8)
    labels[order] = int_to_bits(gray_code(k), k)
    return labels


def gray_penalty(points: np.ndarray, labels: np.ndarray) -> float:
    """Mean Hamming distance between labels of minimum-distance neighbours."""
    W = _neighbour_mask(points)
    L = np.asarray(labels, dtype=np.int64)
    H = np.sum(L[:, None, :] != L[None, :, :], axis=-1)
    return float(np.sum(W * H) / np.sum(W))


def _neighbour_mask(points: np.ndarray) -> np.ndarray:
    p = np.asarray(points, dtype=float)
    d = np.sum((p[:, None, :] - p[None, :, :]) ** 2, axis=-1)
    np.fill_diagonal(d, np.inf)
    return np.isclose(d, d.min(), rtol=1e-9).astype(np.int64)


def refine_gray_labels(points: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Pairwise label swaps that lower the Gray penalty, until none does.

    Swaps are tried in index order and accepted on strict improvement, so the
    result is deterministic for a given starting labeling.
    """
    W = _neighbour_mask(points)
    L = np.asarray(labels, dtype=np.int64).copy()
    n = len(L)
    improved = True
    while improved:
        improved = False
        for i in range(n):
            for j in range(i + 1, n):
                # cost change of exchanging the labels of i and j
                hi = np.sum(L != L[i], axis=1)
                hj = np.sum(L != L[j], axis=1)
                wi, wj = W[i].copy(), W[j].copy()
                wi[j] = wj[i] = 0
                delta = wi @ (hj - hi) + wj @ (hi - hj)
                if delta < 0:
                    L[[i, j]] = L[[j, i]]
                    improved = True
    return L.astype(np.uint8)


# ---------------------------------------------------------------------------
# 4D formats


def _assemble(base: Constellation2D, x_class, members, class_labels, name: str):
    x_class = np.asarray(x_class)
    px, py, rows = [], [], []
    for a in range(base.M):
        c = x_class[a]
        for j, yi in enumerate(members[c]):
            px.append(a)
            py.append(yi)
            rows.append(np.concatenate([base.labels[a], class_labels[c][j]]))
    px, py = np.array(px), np.array(py)
    pts = np.concatenate([base.points[px], base.points[py]], axis=1)
    st = ProductStructure(
        base.points, base.labels, x_class, base.points,
        tuple(np.asarray(mb) for mb in members),
        tuple(np.asarray(cl, dtype=np.uint8) for cl in class_labels), px, py,
    )
    return LabeledConstellation4D(pts, np.array(rows, dtype=np.uint8), name, st).normalize()


def build_pm_product(m: int) -> LabeledConstellation4D:
    """PM-M-QAM: independent Gray-labeled ``2^m``-QAM on both polarizations."""
    base = build_pm_qam(m)
    return _assemble(
        base, np.zeros(base.M, dtype=int), [np.arange(base.M)], [base.labels],
        f"PM-{base.M}QAM",
    )


def build_qcm_qam(m: int, refine: bool = True) -> LabeledConstellation4D:
    """Quasi-constant-modulus QAM with ``2^m * 2^(m-1)`` points.

    X carries any point of the ``2^m``-QAM with its Gray label; Y carries a
    point of the complementary shell, labeled by ``m - 1`` bits that follow a
    Gray code along the shell's (angle, radius) order. With ``refine`` the
    shell labels are then passed through :func:`refine_gray_labels`.
    """
    base = build_pm_qam(m)
    shells = split_shells(base)
    x_class = np.zeros(base.M, dtype=int)
    x_class[shells.outer] = 1
    # class 0: X inner -> Y outer; class 1: X outer -> Y inner
    members = [shells.outer, shells.inner]
    class_labels = [angle_radius_gray_labels(base.points[mb]) for mb in members]
    if refine:
        class_labels = [refine_gray_labels(base.points[mb], cl)
                        for mb, cl in zip(members, class_labels)]
    return _assemble(base, x_class, members, class_labels, f"{base.M * base.M // 2}QCM-QAM")


def _parity_class_labels(base: Constellation2D, members):
    # Fischer-style parity completion: drop one bit of the 2D Gray label if the
    # remaining bits stay unique inside each parity class.
    for drop in range(base.m - 1, -1, -1):
        keep = [k for k in range(base.m) if k != drop]
        cand = [base.labels[mb][:, keep] for mb in members]
        if all(len(np.unique(bits_to_int(cl))) == len(cl) for cl in cand):
            return cand
    return [angle_radius_gray_labels(base.points[mb]) for mb in members]


def build_sp_qam(m: int, refine: bool = True) -> LabeledConstellation4D:
    """Set-partitioned QAM: the even-parity half of the PM-``2^m``-QAM product.

    A 4D point is kept when the sum of its four integer lattice indices is
    even, which doubles the minimum squared Euclidean distance. Y labels
    drop one bit of the 2D Gray label inside each parity class and are then
    refined like the QCM shell labels when ``refine`` is set.
    """
    base = build_pm_qam(m)
    lat = lattice_coordinates(base.points)
    par = lat.sum(axis=1) % 2
    members = [np.flatnonzero(par == 0), np.flatnonzero(par == 1)]
    class_labels = _parity_class_labels(base, members)
    if refine:
        class_labels = [refine_gray_labels(base.points[mb], cl)
                        for mb, cl in zip(members, class_labels)]
    return _assemble(base, par, members, class_labels, f"{base.M * base.M // 2}SP-QAM")


BUILTIN_FORMATS = {
    "512QCM-QAM": lambda: build_qcm_qam(5),
    "2048QCM-QAM": lambda: build_qcm_qam(6),
    "8192QCM-QAM": lambda: build_qcm_qam(7),
    "512SP-QAM": lambda: build_sp_qam(5),
    "2048SP-QAM": lambda: build_sp_qam(6),
    "8192SP-QAM": lambda: build_sp_qam(7),
    "PM-QPSK": lambda: build_pm_product(2),
    "PM-16QAM": lambda: build_pm_product(4),
    "PM-32QAM": lambda: build_pm_product(5),
    "PM-64QAM": lambda: build_pm_product(6),
    "PM-128QAM": lambda: build_pm_product(7),
}

_cache: dict = {}


def get_format(name: str) -> LabeledConstellation4D:
    """Built-in format by name, or a constellation table loaded from a path."""
    if name in BUILTIN_FORMATS:
        if name not in _cache:
            _cache[name] = BUILTIN_FORMATS[name]()
        return _cache[name]
    path = Path(name)
    if path.is_file():
        return load_constellation(path)
    raise KeyError(f"unknown format {name!r}")


def energy_stats(c: LabeledConstellation4D) -> dict:
    """Moments of the per-point squared 4D norm under uniform symbols."""
    e = c.energies
    if e.size == 0:
        raise ValueError("empty constellation")
    return {"mean": float(e.mean()), "variance": float(e.var()),
            "max": float(e.max()), "min": float(e.min())}


def map_bits(c: LabeledConstellation4D, bits) -> np.ndarray:
    """Map a flat 0/1 bit stream to an ``(n, 4)`` array of 4D symbols."""
    idx = bits_to_indices(c, bits)
    return c.points[idx]


def bits_to_indices(c: LabeledConstellation4D, bits) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.uint8).ravel()
    k = c.bits_per_symbol
    if bits.size % k:
        raise ValueError(f"bit stream length {bits.size} is not a multiple of {k}")
    return c.label_index[bits_to_int(bits.reshape(-1, k))]


def nearest_point(c: LabeledConstellation4D, y) -> np.ndarray | int:
    """Index of the closest point; ties resolve to the lowest index."""
    y = np.asarray(y, dtype=float)
    single = y.ndim == 1
    y = np.atleast_2d(y)
    out = np.empty(len(y), dtype=np.int64)
    sq = np.sum(c.points**2, axis=1)
    for s in range(0, len(y), 4096):
        blk = y[s:s + 4096]
        d = sq[None, :] - 2 * blk @ c.points.T
        out[s:s + 4096] = np.argmin(d, axis=1)
    return int(out[0]) if single else out


# ---------------------------------------------------------------------------
# structure inference for tables loaded from disk


def infer_structure(points: np.ndarray, labels: np.ndarray) -> ProductStructure | None:
    """Recover a :class:`ProductStructure` from raw points/labels if one exists."""
    xr = np.round(points[:, :2], _DECIMALS)
    yr = np.round(points[:, 2:], _DECIMALS)
    x_pts, point_x = np.unique(xr, axis=0, return_inverse=True)
    y_pts, point_y = np.unique(yr, axis=0, return_inverse=True)
    point_x, point_y = point_x.ravel(), point_y.ravel()
    A = len(x_pts)
    mx = A.bit_length() - 1
    if A != 2**mx:
        return None
    k = labels.shape[1]
    x_lab = np.zeros((A, mx), dtype=np.uint8)
    x_lab[point_x] = labels[:, :mx]
    if np.any(x_lab[point_x] != labels[:, :mx]):
        return None
    if len(np.unique(bits_to_int(x_lab))) != A:
        return None
    classes: dict = {}
    x_class = np.empty(A, dtype=int)
    members, class_labels = [], []
    for a in range(A):
        sel = np.flatnonzero(point_x == a)
        order = np.argsort(point_y[sel])
        ys = point_y[sel][order]
        yl = labels[sel][order][:, mx:]
        key = (ys.tobytes(), yl.tobytes())
        if key not in classes:
            if len(ys) != 2 ** (k - mx):
                return None
            classes[key] = len(members)
            members.append(ys)
            class_labels.append(yl)
        x_class[a] = classes[key]
    return ProductStructure(x_pts.astype(float), x_lab, x_class, y_pts.astype(float),
                            tuple(members), tuple(class_labels), point_x, point_y)


# ---------------------------------------------------------------------------
# plain-text table I/O


def save_constellation(c: LabeledConstellation4D, path) -> None:
    """Write ``c`` as a whitespace-separated table (4 coordinates + label bits)."""
    path = Path(path)
    lines = [
        f"# name: {c.name}",
        f"# spectral_efficiency: {c.spectral_efficiency}",
        f"# points: {len(c)}",
        "# columns: x_I x_Q y_I y_Q label",
    ]
    for p, lab in zip(c.points, c.labels):
        coords = " ".join(f"{v:.17g}" for v in p)
        lines.append(f"{coords} {''.join(map(str, lab))}")
    path.write_text("\n".join(lines) + "\n")


def load_constellation(path) -> LabeledConstellation4D:
    path = Path(path)
    name = path.stem
    pts, labs = [], []
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, val = line[1:].partition(":")
            if key.strip() == "name":
                name = val.strip()
            continue
        fields = line.split()
        if len(fields) != 5:
            raise ValueError(f"malformed constellation row: {line!r}")
        pts.append([float(v) for v in fields[:4]])
        labs.append([int(ch) for ch in fields[4]])
    return LabeledConstellation4D(np.array(pts), np.array(labs, dtype=np.uint8), name)
