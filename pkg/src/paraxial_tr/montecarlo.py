"""Ensembles over medium realizations, peak fitting and comparison reports."""
from __future__ import annotations

import hashlib
import json
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

import numpy as np
from scipy import optimize

from . import __version__
from .core import dump_config
from .grid import TransverseGrid
from .moments import (MomentParams, MomentPrediction, covariance_refocused, limit_mean_refocused,
                      predict_image, shift_params)
from .propagator import realization_for
from .timereversal import ImageFunction, run_channels

BLOCK = 8


@dataclass(frozen=True, eq=False)
class Channel:
    name: str
    b: tuple[float, float] = (0.0, 0.0)
    psi: Optional[ImageFunction] = None

    def key(self) -> str:
        if self.psi is None:
            img = None
        elif self.psi.is_points:
            img = [self.psi.points.tolist(), self.psi.weights.tolist()]
        else:
            img = [self.psi.values.tolist(), self.psi.spacing]
        return json.dumps([self.name, list(self.b), img])


@dataclass(frozen=True)
class Probe:
    x: tuple[float, float]        # requested central offset from y
    h: tuple[float, float]        # requested separation
    i1: tuple[int, int]           # grid index of y + x + h/2 (snapped)
    i2: tuple[int, int]
    x_eff: tuple[float, float]
    h_eff: tuple[float, float]


def make_probes(cfg, xs: Sequence, hs: Sequence) -> list[Probe]:
    g = cfg.grid
    y = np.asarray(cfg.y)
    out = []
    for x in xs:
        for h in hs:
            x, h = np.asarray(x, float), np.asarray(h, float)
            p1, p2 = g.snap(y + x + h / 2), g.snap(y + x - h / 2)
            out.append(Probe(tuple(x), tuple(h), g.index_of(p1), g.index_of(p2),
                             tuple((p1 + p2) / 2 - y), tuple(p1 - p2)))
    return out


def default_probes(cfg, R_tr: float) -> list[Probe]:
    if not math.isfinite(R_tr):
        R_tr = 4 * cfg.grid.spacing
    hs = [(0.0, 0.0)]
    for f in (0.5, 1.0, 2.0, 4.0):
        hs += [(f * R_tr, 0.0), (0.0, f * R_tr)]
    xs = [(0.0, 0.0), (R_tr, 0.0), (4 * R_tr, 0.0)]
    return make_probes(cfg, xs, hs)


class _Acc:
    """Streaming mean / second-moment accumulator, mergeable (Chan et al.)."""

    def __init__(self, shape, n_probes):
        self.n = 0
        self.mean = np.zeros(shape, complex)
        self.m2 = np.zeros(shape)
        self.abs2 = np.zeros(shape)
        self.pmean = np.zeros(n_probes, complex)
        self.pm2 = np.zeros(n_probes)

    def add(self, u, prod):
        self.n += 1
        d = u - self.mean
        self.mean += d / self.n
        self.m2 += (d * np.conj(u - self.mean)).real
        self.abs2 += (np.abs(u) ** 2 - self.abs2) / self.n
        dp = prod - self.pmean
        self.pmean += dp / self.n
        self.pm2 += (dp * np.conj(prod - self.pmean)).real

    @staticmethod
    def merge(a: "_Acc", b: "_Acc") -> "_Acc":
        if a.n == 0:
            return b
        if b.n == 0:
            return a
        out = _Acc(a.mean.shape, len(a.pmean))
        n = a.n + b.n
        out.n = n
        f = b.n / n
        d = b.mean - a.mean
        out.mean = a.mean + d * f
        out.m2 = a.m2 + b.m2 + np.abs(d) ** 2 * a.n * f
        out.abs2 = a.abs2 + (b.abs2 - a.abs2) * f
        dp = b.pmean - a.pmean
        out.pmean = a.pmean + dp * f
        out.pm2 = a.pm2 + b.pm2 + np.abs(dp) ** 2 * a.n * f
        return out


@dataclass
class PeakFit:
    center: Optional[np.ndarray]
    width: float
    amplitude: float
    found: bool = True


@dataclass
class EnsembleStats:
    n: int
    grid: TransverseGrid
    y: tuple[float, float]
    channel: str
    mean_field: np.ndarray
    variance_field: np.ndarray
    mean_abs2: np.ndarray
    mean_se: np.ndarray
    probes: list[Probe]
    second_moment: dict = field(default_factory=dict)
    second_moment_se: dict = field(default_factory=dict)
    covariance: dict = field(default_factory=dict)
    covariance_se: dict = field(default_factory=dict)
    peak_fit: Optional[PeakFit] = None
    config_hash: str = ""

    def value_at(self, arr: np.ndarray, offset) -> Any:
        return arr[self.grid.index_of(np.asarray(self.y) + np.asarray(offset, float))]

    def second_moment_at(self, x, h) -> complex:
        """Estimator at (x, h); -h is answered by conjugation (exact Hermitian symmetry)."""
        key = (tuple(map(float, x)), tuple(map(float, h)))
        if key in self.second_moment:
            return self.second_moment[key]
        neg = (key[0], tuple(-v for v in key[1]))
        return np.conj(self.second_moment[neg])


def _finalise(acc: _Acc, grid, cfg, probes, channel) -> EnsembleStats:
    n = acc.n
    var = acc.m2 / (n - 1)
    if var.min() < -1e-12 * max(var.max(), 1e-300):
        warnings.warn("negative variance estimate clipped", stacklevel=2)
    var = np.maximum(var, 0.0)
    st = EnsembleStats(n, grid, cfg.y, channel, acc.mean, var, acc.abs2, np.sqrt(var / n), probes)
    for j, pr in enumerate(probes):
        key = (pr.x, pr.h)
        m1, m2 = acc.mean[pr.i1], acc.mean[pr.i2]
        st.second_moment[key] = complex(acc.pmean[j])
        se = math.sqrt(acc.pm2[j] / (n * (n - 1)))
        st.second_moment_se[key] = se
        st.covariance[key] = complex(n / (n - 1) * (acc.pmean[j] - m1 * np.conj(m2)))
        st.covariance_se[key] = se
    st.peak_fit = fit_peak(np.abs(acc.mean) ** 2, grid)
    return st


def _probe_products(u: np.ndarray, probes: list[Probe]) -> np.ndarray:
    return np.array([u[p.i1] * np.conj(u[p.i2]) for p in probes], complex)


def _tree_merge(items: list):
    while len(items) > 1:
        nxt = [items[i] if i + 1 == len(items) else [_Acc.merge(a, b) for a, b in zip(items[i], items[i + 1])]
               for i in range(0, len(items), 2)]
        items = nxt
    return items[0]


def resolve_threads(threads: Optional[int]) -> int:
    if threads is None:
        threads = int(os.environ.get("PARAXIAL_TR_THREADS", "1") or 1)
    return max(1, int(threads))


def _cache_key(cfg, n, channels, probes) -> str:
    h = hashlib.sha256()
    h.update(dump_config(cfg).encode())
    h.update(str(n).encode())
    for c in channels:
        h.update(c.key().encode())
    for p in probes:
        h.update(repr((p.i1, p.i2)).encode())
    h.update(__version__.encode())
    return h.hexdigest()[:24]


def run_ensemble_channels(cfg, n: int, channels: Sequence[Channel], probes: Optional[list[Probe]] = None,
                          threads: Optional[int] = None, cache_dir=None,
                          observe: Optional[Callable[[int, np.ndarray], Any]] = None,
                          start: int = 0) -> tuple[dict[str, EnsembleStats], list]:
    """Run realizations start .. start+n-1 and accumulate per-channel statistics.

    ``observe(i, fields)`` is called per realization with the (n_channels, n, n)
    array; its return values come back in realization order. Results do not
    depend on ``threads``: blocks of fixed size are reduced by a fixed tree.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    if probes is None:
        probes = default_probes(cfg, MomentParams.from_config(cfg).R_tr)
    key = _cache_key(cfg, (start, n), channels, probes)
    path = Path(cache_dir) / f"ens_{key}.npz" if cache_dir is not None and observe is None else None
    if path is not None and path.exists():
        return load_stats(path, cfg, channels, probes), []

    chans = [(c.b, c.psi) for c in channels]
    shape = (cfg.grid.n, cfg.grid.n)
    blocks = [range(i, min(i + BLOCK, start + n)) for i in range(start, start + n, BLOCK)]

    def work(block):
        accs = [_Acc(shape, len(probes)) for _ in channels]
        obs = []
        for i in block:
            try:
                fields = run_channels(cfg, realization_for(cfg, i), chans)
            except Exception as exc:
                raise RuntimeError(f"realization {i} failed: {exc}") from exc
            for acc, u in zip(accs, fields):
                acc.add(u, _probe_products(u, probes))
            if observe is not None:
                obs.append(observe(i, fields))
        return accs, obs

    nthreads = resolve_threads(threads)
    if nthreads == 1:
        results = [work(b) for b in blocks]
    else:
        with ThreadPoolExecutor(nthreads) as ex:
            results = list(ex.map(work, blocks))
    merged = _tree_merge([r[0] for r in results])
    observed = [o for r in results for o in r[1]]
    stats = {c.name: _finalise(a, cfg.grid, cfg, probes, c.name) for c, a in zip(channels, merged)}
    if path is not None:
        save_stats(path, stats)
    return stats, observed


def run_ensemble(cfg, n: int, probes: Optional[list[Probe]] = None, threads: Optional[int] = None,
                 cache_dir=None) -> EnsembleStats:
    stats, _ = run_ensemble_channels(cfg, n, [Channel("main", cfg.b, cfg.psi)], probes, threads, cache_dir)
    return stats["main"]


def save_stats(path: Path, stats: dict[str, EnsembleStats]) -> None:
    arrays = {}
    for name, st in stats.items():
        arrays[f"{name}__mean"] = st.mean_field
        arrays[f"{name}__var"] = st.variance_field
        arrays[f"{name}__abs2"] = st.mean_abs2
        arrays[f"{name}__n"] = np.array(st.n)
        keys = list(st.second_moment)
        arrays[f"{name}__sm"] = np.array([st.second_moment[k] for k in keys])
        arrays[f"{name}__smse"] = np.array([st.second_moment_se[k] for k in keys])
        arrays[f"{name}__cov"] = np.array([st.covariance[k] for k in keys])
    tmp = path.with_suffix(".tmp.npz")
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(tmp, **arrays)
    os.replace(tmp, path)


def load_stats(path: Path, cfg, channels, probes) -> dict[str, EnsembleStats]:
    out = {}
    with np.load(path) as z:
        for c in channels:
            n = int(z[f"{c.name}__n"])
            var = z[f"{c.name}__var"]
            st = EnsembleStats(n, cfg.grid, cfg.y, c.name, z[f"{c.name}__mean"], var,
                               z[f"{c.name}__abs2"], np.sqrt(var / n), probes)
            for j, pr in enumerate(probes):
                k = (pr.x, pr.h)
                st.second_moment[k] = complex(z[f"{c.name}__sm"][j])
                st.second_moment_se[k] = float(z[f"{c.name}__smse"][j])
                st.covariance[k] = complex(z[f"{c.name}__cov"][j])
                st.covariance_se[k] = float(z[f"{c.name}__smse"][j])
            st.peak_fit = fit_peak(np.abs(st.mean_field) ** 2, cfg.grid)
            out[c.name] = st
    return out


# ------------------------------------------------------------------ peak fit

def _gauss(coords, amp, c1, c2, w, off):
    x1, x2 = coords
    return amp * np.exp(-((x1 - c1) ** 2 + (x2 - c2) ** 2) / (2 * w * w)) + off


def fit_peak(field: np.ndarray, grid: TransverseGrid, sigma: Optional[np.ndarray] = None) -> PeakFit:
    """Gaussian + offset least-squares fit around the dominant maximum."""
    f = np.asarray(field, float)
    med = float(np.median(f))
    i, j = np.unravel_index(np.argmax(f), f.shape)
    top = f[i, j]
    if not top > 0 or (med > 0 and top / med < 2) or top - med <= 0:
        return PeakFit(None, math.nan, math.nan, found=False)
    area = np.count_nonzero(f - med > 0.5 * (top - med)) * grid.spacing**2
    w0 = max(math.sqrt(area / (2 * math.pi * math.log(2))), grid.spacing)
    half = max(3.0, 3 * w0 / grid.spacing)
    h = int(math.ceil(half))
    sl = (slice(max(i - h, 0), i + h + 1), slice(max(j - h, 0), j + h + 1))
    x1, x2 = grid.xx[0][sl].ravel(), grid.xx[1][sl].ravel()
    data = f[sl].ravel()
    s = None if sigma is None else np.asarray(sigma)[sl].ravel()
    p0 = (top - med, grid.x[i], grid.x[j], w0, med)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", optimize.OptimizeWarning)
            popt, _ = optimize.curve_fit(_gauss, (x1, x2), data, p0=p0, sigma=s, maxfev=20000)
    except RuntimeError:
        return PeakFit(None, math.nan, math.nan, found=False)
    return PeakFit(np.array(popt[1:3]), abs(float(popt[3])), float(popt[0]))


# ------------------------------------------------------------------ compare

@dataclass
class Row:
    quantity: str
    mc_value: float
    prediction: float
    rel_err: float
    z_score: float
    passed: bool


@dataclass
class ComparisonReport:
    rows: list[Row] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def add(self, quantity, mc, pred, se, tol, passed=None):
        mc, pred = complex(mc), complex(pred)
        diff = abs(mc - pred)
        rel = diff / abs(pred) if pred != 0 else (0.0 if diff == 0 else math.inf)
        z = diff / se if se > 0 else (0.0 if diff == 0 else math.inf)
        if passed is None:
            passed = diff <= max(tol * abs(pred), 3 * se)
        row = Row(quantity, abs(mc) if mc.imag else mc.real, abs(pred) if pred.imag else pred.real,
                  rel, z, bool(passed))
        self.rows.append(row)
        return row

    def metric(self, quantity, value, limit, passed) -> Row:
        """A scalar figure of merit checked against ``limit`` (stored as the prediction)."""
        row = Row(quantity, float(value), float(limit), math.nan, math.nan, bool(passed))
        self.rows.append(row)
        return row

    def text(self) -> str:
        w = max(len(r.quantity) for r in self.rows) if self.rows else 8
        lines = [f"{r.quantity:<{w}}  mc={r.mc_value:.6g}  pred={r.prediction:.6g}  rel={r.rel_err:.3g}  "
                 f"z={r.z_score:.3g}  {'PASS' if r.passed else 'FAIL'}" for r in self.rows]
        lines.append(f"overall: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


@dataclass(frozen=True)
class Tolerances:
    mean_l2: float = 0.15
    covariance: float = 0.20
    variance_cv: float = 0.30
    image_ncc: float = 0.9
    marginal_z: float = 3.0


def disk_offsets(grid: TransverseGrid, radius: float) -> np.ndarray:
    m = int(math.floor(radius / grid.spacing))
    a = np.arange(-m, m + 1) * grid.spacing
    A1, A2 = np.meshgrid(a, a, indexing="ij")
    keep = A1**2 + A2**2 <= radius**2 + 1e-12
    return np.column_stack([A1[keep], A2[keep]])


def mean_profile_error(stats: EnsembleStats, params: MomentParams, radius: float, b=(0.0, 0.0)):
    """Relative L2 mismatch of the MC mean against the limit profile on the disk."""
    offs = disk_offsets(stats.grid, radius)
    pred, _ = limit_mean_refocused(offs, stats.y, params, b)
    mc = np.array([stats.value_at(stats.mean_field, o) for o in offs])
    se = np.array([stats.value_at(stats.mean_se, o) for o in offs])
    err = math.sqrt(np.sum(np.abs(mc - pred) ** 2) / np.sum(np.abs(pred) ** 2))
    noise = math.sqrt(np.sum(se**2) / np.sum(np.abs(pred) ** 2))
    return err, noise, offs, mc, pred


def variance_cv(stats: EnsembleStats, radius: float) -> float:
    offs = disk_offsets(stats.grid, radius)
    v = np.array([stats.value_at(stats.variance_field, o) for o in offs])
    return float(np.std(v) / np.mean(v))


def ncc(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, float).ravel() - np.mean(a)
    b = np.asarray(b, float).ravel() - np.mean(b)
    return float(a @ b / math.sqrt((a @ a) * (b @ b)))


def compare(stats: EnsembleStats, pred: MomentPrediction, params: MomentParams,
            tol: Tolerances = Tolerances(), config_hash: Optional[str] = None) -> ComparisonReport:
    """Mean profile, covariance probes and variance flatness of one b = 0 channel."""
    if config_hash is not None and stats.config_hash and stats.config_hash != config_hash:
        raise ValueError("statistics and prediction come from different configs")
    rep = ComparisonReport()
    R = pred.R_tr
    if math.isfinite(R):
        err, noise, *_ = mean_profile_error(stats, params, 3 * R)
        rep.metric("mean_profile_l2", err, tol.mean_l2, err <= tol.mean_l2)
        U0 = stats.value_at(stats.mean_field, (0.0, 0.0))
        rep.add("mean_peak", U0, pred.U_peak, float(stats.value_at(stats.mean_se, (0, 0))), tol.mean_l2)
    for pr in stats.probes:
        key = (pr.x, pr.h)
        p, _ = covariance_refocused(pr.x_eff, pr.h_eff, stats.y, params)
        rep.add(f"cov x=({pr.x[0]:.4g},{pr.x[1]:.4g}) h=({pr.h[0]:.4g},{pr.h[1]:.4g})",
                stats.covariance[key], p, stats.covariance_se[key], tol.covariance)
    if math.isfinite(R):
        cv = variance_cv(stats, 4 * R)
        rep.metric("variance_cv", cv, tol.variance_cv, cv <= tol.variance_cv)
    return rep


# ----------------------------------------------------------- shifted / image

def square_image(params: MomentParams, spacing_factor: float = 1.0) -> ImageFunction:
    """Four unit points on a square whose side is spacing_factor * 3 R_tr / alpha_L."""
    d = spacing_factor * 3 * params.R_tr / params.alpha_L
    h = d / 2
    return ImageFunction.from_points([(h, h), (-h, h), (-h, -h), (h, -h)])


# predict_image drops the coherent exp(-Q/4) term; below this Q the four
# coherent spots are as bright as the attenuated image points
IMAGE_MIN_Q = 20.0


def acceptance_channels(cfg, params: MomentParams, image: Optional[bool] = None) -> list[Channel]:
    sp = shift_params((0.0, 0.0), params)
    out = [Channel("main", cfg.b, cfg.psi),
           Channel("half_bmax", (0.5 * sp.b_max, 0.0)),
           Channel("bmax", (sp.b_max, 0.0))]
    if params.Q >= IMAGE_MIN_Q if image is None else image:
        out.append(Channel("image", (0.0, 0.0), square_image(params)))
    return out


def shifted_report(stats: dict[str, EnsembleStats], params: MomentParams, rep: ComparisonReport,
                   tol: Tolerances = Tolerances()) -> ComparisonReport:
    g = next(iter(stats.values())).grid
    sp = shift_params((0.0, 0.0), params)
    if "half_bmax" in stats:
        b = (0.5 * sp.b_max, 0.0)
        xb = params.alpha_L * b[0]
        fit = stats["half_bmax"].peak_fit
        c = fit.center[0] - stats["half_bmax"].y[0] if fit.found else math.nan
        rep.add("shift_center_half_bmax", c, xb, g.spacing, 0.0,
                passed=fit.found and abs(c - xb) <= g.spacing
                and abs(fit.center[1] - stats["half_bmax"].y[1]) <= g.spacing)
    if "bmax" in stats:
        st = stats["bmax"]
        xb = (params.alpha_L * sp.b_max, 0.0)
        m = abs(st.value_at(st.mean_field, xb))
        s = math.sqrt(st.value_at(st.variance_field, xb))
        z = m / s if s > 0 else math.inf
        rep.metric("bmax_peak_z", z, tol.marginal_z, z < tol.marginal_z)
        snr_b = shift_params((sp.b_max, 0.0), params).snr_shifted
        rep.metric("bmax_snr_minus_one", abs(snr_b - 1), 1e-12, abs(snr_b - 1) <= 1e-12)
    if "image" in stats:
        st = stats["image"]
        psi = square_image(params)
        score, resolved = image_scores(st, psi, params)
        rep.metric("image_ncc", score, tol.image_ncc, score >= tol.image_ncc)
        rep.metric("image_peaks_resolved", float(resolved), 1.0, resolved)
    return rep


def image_window(stats: EnsembleStats, params: MomentParams, psi: ImageFunction) -> np.ndarray:
    reach = params.alpha_L * psi.support_radius + 4 * params.R_tr
    return disk_offsets(stats.grid, reach)


def image_scores(stats: EnsembleStats, psi: ImageFunction, params: MomentParams) -> tuple[float, bool]:
    offs = image_window(stats, params, psi)
    mc = np.array([abs(stats.value_at(stats.mean_field, o)) ** 2 for o in offs])
    pr = np.abs(predict_image(offs, psi, params)) ** 2
    return ncc(mc, pr), peaks_resolved(stats, psi, params)


def peaks_resolved(stats: EnsembleStats, psi: ImageFunction, params: MomentParams, dip: float = 0.8) -> bool:
    """Every image point has a local maximum near alpha_L b_j, and the
    intensity midway between neighbouring points dips below ``dip`` times the
    weaker of the two maxima."""
    g = stats.grid
    I = np.abs(stats.mean_field) ** 2
    centres = params.alpha_L * psi.as_points()[0]
    r = max(1, int(round(params.R_tr / g.spacing)))
    peaks = []
    for c in centres:
        i, j = g.index_of(np.asarray(stats.y) + c)
        win = I[i - r:i + r + 1, j - r:j + r + 1]
        a, bb = np.unravel_index(np.argmax(win), win.shape)
        if a in (0, win.shape[0] - 1) or bb in (0, win.shape[1] - 1):
            return False
        peaks.append(win[a, bb])
    order = np.argsort(np.arctan2(centres[:, 1], centres[:, 0]))
    for k in range(len(order)):
        a, bb = order[k], order[(k + 1) % len(order)]
        mid = 0.5 * (centres[a] + centres[bb])
        if I[g.index_of(np.asarray(stats.y) + mid)] > dip * min(peaks[a], peaks[bb]):
            return False
    return True
