"""Effective SNR, GMI (Monte Carlo and Gauss-Hermite) and reach interpolation."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .constellation import LabeledConstellation4D, ProductStructure
from .txrx import DspOutput

SNR_INF = float("inf")


@dataclass
class MetricReport:
    format: str
    fiber: str
    distance_km: float
    launch_power_dbm: float
    seed: int
    n_symbols: int
    snr_eff_db: float
    gmi: float
    error_power: float = float("nan")

    @classmethod
    def columns(cls) -> list:
        return [f.name for f in fields(cls)]

    def row(self) -> dict:
        return asdict(self)


@dataclass
class ReachResult:
    threshold: float
    reach_km: float
    samples: list = field(default_factory=list)


def error_power(dsp: DspOutput) -> float:
    """Mean squared 4D error between received and transmitted symbols."""
    return float(np.mean(np.sum((dsp.rx - dsp.tx) ** 2, axis=1)))


def effective_snr(dsp: DspOutput) -> float:
    """Signal power over total residual error power in dB (inf for error-free input)."""
    if len(dsp.tx) == 0:
        raise ValueError("no symbols")
    err = error_power(dsp)
    if err == 0:
        return SNR_INF
    sig = float(np.mean(np.sum(dsp.tx**2, axis=1)))
    return 10 * np.log10(sig / err)


# ---------------------------------------------------------------------------
# bit-wise demapping


def _indicator_tables(st: ProductStructure):
    A, C = len(st.x_points), st.n_classes
    B = len(st.y_points)
    cls_x = np.zeros((A, C))
    cls_x[np.arange(A), st.x_class] = 1.0
    # X bits: columns ordered (k, b, c)
    xb = np.zeros((A, st.mx, 2, C))
    for k in range(st.mx):
        for b in (0, 1):
            xb[:, k, b, :] = cls_x * (st.x_labels[:, k] == b)[:, None]
    mem = np.zeros((B, C))
    yb = np.zeros((B, st.my, 2, C))
    for c, (members, labels) in enumerate(zip(st.class_members, st.class_labels)):
        mem[members, c] = 1.0
        for k in range(st.my):
            for b in (0, 1):
                yb[members[labels[:, k] == b], k, b, c] = 1.0
    return cls_x, xb.reshape(A, -1), mem, yb.reshape(B, -1)


def _exp_rel(pts2d, rx2d, ref2d, inv2var):
    # exp(-(|r - p|^2 - |r - ref|^2) / (2 var)) for every candidate point p
    d = (np.sum(rx2d**2, 1)[:, None] - 2 * rx2d @ pts2d.T + np.sum(pts2d**2, 1)[None, :])
    d0 = np.sum((rx2d - ref2d) ** 2, axis=1)
    return np.exp(-(d - d0[:, None]) * inv2var)


def _loss_structured(fmt: LabeledConstellation4D, rx, tx_idx, var) -> np.ndarray:
    """Per-symbol sum over bits of log2(sum_all / sum_matching_tx_bit)."""
    st = fmt.structure
    cls_x, xb, mem, yb = _indicator_tables(st)
    C, mx, my = st.n_classes, st.mx, st.my
    inv = 1 / (2 * var)
    px, py = st.point_x[tx_idx], st.point_y[tx_idx]
    eX = _exp_rel(st.x_points, rx[:, :2], st.x_points[px], inv)
    eY = _exp_rel(st.y_points, rx[:, 2:], st.y_points[py], inv)
    Xs = eX @ cls_x  # (n, C)
    Xg = (eX @ xb).reshape(-1, mx, 2, C)
    Ts = eY @ mem
    Tg = (eY @ yb).reshape(-1, my, 2, C)
    s_all = np.sum(Xs * Ts, axis=1)
    lab = fmt.labels[tx_idx]
    n = len(rx)
    rows = np.arange(n)
    loss = np.zeros(n)
    for k in range(mx):
        s_b = np.sum(Xg[rows, k, lab[:, k], :] * Ts, axis=1)
        loss += np.log2(s_all / s_b)
    for k in range(my):
        s_b = np.sum(Xs * Tg[rows, k, lab[:, mx + k], :], axis=1)
        loss += np.log2(s_all / s_b)
    return loss


def _loss_bruteforce(fmt: LabeledConstellation4D, rx, tx_idx, var) -> np.ndarray:
    e = _exp_rel(fmt.points, rx, fmt.points[tx_idx], 1 / (2 * var))
    s_all = e.sum(axis=1)
    lab = fmt.labels[tx_idx].astype(bool)
    ones = e @ fmt.labels
    zeros = e @ (1 - fmt.labels)
    s_b = np.where(lab, ones, zeros)
    return np.sum(np.log2(s_all[:, None] / s_b), axis=1)


def bitwise_loss(fmt: LabeledConstellation4D, rx, tx_idx, var, chunk: int = 1 << 15) -> np.ndarray:
    """Per-symbol GMI loss for Gaussian likelihoods with per-dimension variance ``var``."""
    rx = np.asarray(rx, dtype=float)
    tx_idx = np.asarray(tx_idx)
    fn = _loss_structured if fmt.structure is not None else _loss_bruteforce
    if fmt.structure is None:
        chunk = max(1, min(chunk, (1 << 24) // len(fmt)))
    out = np.empty(len(rx))
    for s in range(0, len(rx), chunk):
        out[s:s + chunk] = fn(fmt, rx[s:s + chunk], tx_idx[s:s + chunk], var)
    return out


def gmi_monte_carlo(dsp: DspOutput, fmt: LabeledConstellation4D) -> float:
    """GMI of a mismatched isotropic-Gaussian bit-wise receiver, bit/4D-sym.

    The per-dimension noise variance is the measured mean squared 4D error
    divided by four. The result is clamped to ``[0, SE]``.
    """
    se = fmt.bits_per_symbol
    var = error_power(dsp) / 4
    if var == 0:
        return float(se)
    scale = 1 / np.sqrt(np.mean(fmt.energies))
    if not np.isclose(scale, 1.0):
        fmt = fmt.normalize()
    loss = bitwise_loss(fmt, dsp.rx, dsp.tx_indices, var)
    return float(np.clip(se - loss.mean(), 0, se))


def _gh_nodes_2d(order: int, min_weight: float):
    u, w = np.polynomial.hermite.hermgauss(order)
    w = w / np.sqrt(np.pi)
    U1, U2 = np.meshgrid(u, u, indexing="ij")
    W = np.outer(w, w).ravel()
    keep = W >= min_weight * W.max()
    return np.stack([U1.ravel(), U2.ravel()], axis=1)[keep], W[keep]


def gmi_ghq(fmt: LabeledConstellation4D, snr_db: float, order: int = 10,
            min_weight: float = 1e-12) -> float:
    """AWGN GMI by Gauss-Hermite quadrature with the product rule per polarization.

    ``snr_db`` is the mean 4D symbol energy over the total noise power of
    four real dimensions. 2D node pairs with weight below ``min_weight``
    times the largest weight are dropped.
    """
    fmt = fmt.normalize()
    se = fmt.bits_per_symbol
    var = 10 ** (-snr_db / 10) / 4
    st = fmt.structure
    if st is None:
        return _gmi_ghq_bruteforce(fmt, var, order, min_weight)
    nodes, w = _gh_nodes_2d(order, min_weight)
    offs = np.sqrt(2 * var) * nodes  # (Q, 2)
    inv = 1 / (2 * var)
    cls_x, xb, mem, yb = _indicator_tables(st)
    C, mx, my = st.n_classes, st.mx, st.my
    Q = len(w)

    def tables(pts, ind_sum, ind_bits, nb):
        # for every transmitted 2D point and node: sums of relative likelihoods
        r = pts[:, None, :] + offs[None, :, :]  # (P, Q, 2)
        d = np.sum((r[:, :, None, :] - pts[None, None, :, :]) ** 2, axis=-1)
        e = np.exp(-(d - np.sum(offs**2, 1)[None, :, None]) * inv)  # (P, Q, P)
        return e @ ind_sum, (e @ ind_bits).reshape(len(pts), Q, nb, 2, C)

    XS, XG = tables(st.x_points, cls_x, xb, mx)
    TS, TG = tables(st.y_points, mem, yb, my)

    total = 0.0
    for a in range(len(st.x_points)):
        sel = np.flatnonzero(st.point_x == a)
        ys = st.point_y[sel]
        lab = fmt.labels[sel]
        xs = XS[a]  # (Q, C)
        s_all = np.einsum("qc,jrc->jqr", xs, TS[ys])  # (J, Q, Q)
        loss = np.zeros_like(s_all)
        for k in range(mx):
            b = lab[0, k]
            loss += np.log2(s_all / np.einsum("qc,jrc->jqr", XG[a, :, k, b, :], TS[ys]))
        for k in range(my):
            tg = TG[ys, :, k, :, :]  # (J, Q, 2, C)
            tgb = tg[np.arange(len(ys)), :, lab[:, mx + k], :]  # (J, Q, C)
            loss += np.log2(s_all / np.einsum("qc,jrc->jqr", xs, tgb))
        total += np.einsum("jqr,q,r->", loss, w, w)
    gmi = se - total / len(fmt)
    return float(np.clip(gmi, 0, se))


def _gmi_ghq_bruteforce(fmt, var, order, min_weight):
    nodes, w = _gh_nodes_2d(order, min_weight)
    offs = np.sqrt(2 * var) * nodes
    Q = len(w)
    W4 = np.outer(w, w).ravel()
    off4 = np.concatenate(
        [np.repeat(offs, Q, axis=0), np.tile(offs, (Q, 1))], axis=1
    )
    total = 0.0
    for i in range(len(fmt)):
        rx = fmt.points[i] + off4
        loss = bitwise_loss(fmt, rx, np.full(len(rx), i), var)
        total += W4 @ loss
    se = fmt.bits_per_symbol
    return float(np.clip(se - total / len(fmt), 0, se))


# ---------------------------------------------------------------------------
# reach


class ThresholdNotBracketed(ValueError):
    pass


def reach_at_threshold(samples, code_rate: float, se: float) -> ReachResult:
    """Distance where GMI(distance) crosses ``code_rate * se``.

    ``samples`` is an iterable of ``(distance_km, gmi)``. GMI must cross the
    threshold between two sampled distances; the crossing is found by linear
    interpolation on the monotone (running-minimum) envelope of the curve.
    """
    pts = sorted((float(d), float(g)) for d, g in samples)
    if len(pts) < 2:
        raise ThresholdNotBracketed("need at least two distances")
    thr = code_rate * se
    d = np.array([p[0] for p in pts])
    g = np.minimum.accumulate(np.array([p[1] for p in pts]))
    if not (g[0] >= thr >= g[-1]):
        raise ThresholdNotBracketed(
            f"threshold {thr:.4g} outside GMI range [{g[-1]:.4g}, {g[0]:.4g}]"
        )
    i = int(np.flatnonzero(g >= thr)[-1])
    if i == len(d) - 1 or g[i] == thr:
        reach = d[i]
    else:
        reach = d[i] + (g[i] - thr) * (d[i + 1] - d[i]) / (g[i] - g[i + 1])
    return ReachResult(thr, float(reach), pts)


def write_reports(reports, path, header_comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.DictWriter(fh, fieldnames=MetricReport.columns(), lineterminator="\n")
        w.writeheader()
        for r in reports:
            w.writerow({k: _fmt(v) for k, v in r.row().items()})


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def circumferential_variance(dsp: DspOutput, top_fraction: float = 0.1) -> float:
    """Variance of the angular error (rad^2) of the highest-energy 2D symbols.

    Both polarizations are pooled; a received 2D projection counts when its
    transmitted point is in the top ``top_fraction`` of 2D energies.
    """
    tx = np.concatenate([dsp.tx[:, 0] + 1j * dsp.tx[:, 1], dsp.tx[:, 2] + 1j * dsp.tx[:, 3]])
    rx = np.concatenate([dsp.rx[:, 0] + 1j * dsp.rx[:, 1], dsp.rx[:, 2] + 1j * dsp.rx[:, 3]])
    e = np.abs(tx) ** 2
    sel = e >= np.quantile(e, 1 - top_fraction) - 1e-12
    ang = np.angle(rx[sel] / tx[sel])
    return float(np.mean(ang**2))
