"""Weighted-bootstrap inference: replicate draws, standard errors, uniform bands.

Each replicate reruns all three stages with i.i.d. standard exponential
weights drawn from a stream keyed by ``(master_seed, b)``, so the ensemble
does not depend on how replicates are scheduled across workers.
"""

from __future__ import annotations

import logging
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from cfsf.data import ObservationTable
from cfsf.errors import InvalidInput, NumericalError
from cfsf.numerics import empirical_quantile, iqr_scaled_sd, rearrange_monotone
from cfsf.pipeline import EstimatorConfig, Setup, estimate, prepare

log = logging.getLogger(__name__)

SE_FLOOR = 1e-12
MAX_FAILURE_SHARE = 0.05


class BootstrapFailed(NumericalError):
    def __init__(self, message, failures=()):
        super().__init__(message)
        self.failures = tuple(failures)


def draw_weights(n: int, seed: int, replicate: int = 0) -> np.ndarray:
    """Standard exponential weights (mean 1, variance 1) for one replicate."""
    if n < 1:
        raise InvalidInput("n must be positive")
    return np.random.default_rng([int(seed), int(replicate)]).standard_exponential(n)


@dataclass(frozen=True)
class BootstrapEnsemble:
    """Successful replicate draws per surface, ``draws[name]`` of shape (B_ok, P)."""

    B: int
    draws: dict = field(repr=False)
    master_seed: int
    indices: np.ndarray = field(repr=False)
    failures: tuple = ()
    weight_law: str = "standard_exponential"

    @property
    def n_ok(self) -> int:
        return int(self.indices.shape[0])


# per-process state for pool workers
_STATE = {}


def _init_worker(table, config, setup, seed, weight_fn):
    _STATE.update(table=table, config=config, setup=setup, seed=seed, weight_fn=weight_fn)


def _replicate(b):
    s = _STATE
    w = s["weight_fn"](s["table"].n, s["seed"], b)
    try:
        est = estimate(s["table"], s["config"], w, s["setup"])
    except NumericalError as exc:
        return b, None, f"{type(exc).__name__}: {exc}"
    return b, est.values(), None


def _run_chunk(bs):
    with warnings.catch_warnings():
        # separated thresholds are routine in reweighted samples
        warnings.simplefilter("ignore")
        return [_replicate(b) for b in bs]


def bootstrap_ensemble(table: ObservationTable, config: EstimatorConfig, B: int,
                       seed: int, *, workers: int = 1, setup: Setup | None = None,
                       weight_fn=draw_weights) -> BootstrapEnsemble:
    """Rerun the pipeline on ``B`` reweighted samples.

    ``weight_fn(n, seed, b)`` supplies the weights of replicate ``b``.
    Results are assembled by replicate index, so the ensemble is identical
    for any ``workers``. Raises :class:`BootstrapFailed` when more than 5% of
    replicates fail.
    """
    if B < 2:
        raise InvalidInput("the bootstrap needs B >= 2")
    if setup is None:
        setup = prepare(table, config)
    chunks = [list(range(b, B, max(workers, 1))) for b in range(max(workers, 1))]
    if workers <= 1:
        _init_worker(table, config, setup, seed, weight_fn)
        results = _run_chunk(range(B))
    else:
        with ProcessPoolExecutor(workers, initializer=_init_worker,
                                 initargs=(table, config, setup, seed, weight_fn)) as ex:
            results = [r for part in ex.map(_run_chunk, chunks) for r in part]
    results.sort(key=lambda r: r[0])
    failures = tuple((b, msg) for b, _, msg in results if msg is not None)
    for b, msg in failures:
        log.warning("replicate %d failed: %s", b, msg)
    if len(failures) > MAX_FAILURE_SHARE * B:
        raise BootstrapFailed(f"{len(failures)} of {B} bootstrap replicates failed", failures)
    ok = [r for r in results if r[2] is None]
    names = ok[0][1].keys()
    draws = {k: np.array([r[1][k] for r in ok]) for k in names}
    return BootstrapEnsemble(B, draws, int(seed), np.array([r[0] for r in ok]), failures)


def pointwise_se(draws, floor: float = SE_FLOOR) -> np.ndarray:
    """IQR/1.349 of the draws at each point (columns), floored."""
    draws = np.asarray(draws, dtype=float)
    if draws.ndim == 1:
        draws = draws[:, None]
    if draws.shape[0] < 2:
        raise InvalidInput("standard errors need at least two replicates")
    se = np.array([iqr_scaled_sd(draws[:, p]) for p in range(draws.shape[1])])
    return np.maximum(se, floor)


def max_t_statistics(draws, estimates, ses) -> np.ndarray:
    draws = np.asarray(draws, dtype=float).reshape(len(draws), -1)
    return np.max(np.abs(draws - np.asarray(estimates)) / np.asarray(ses), axis=1)


def max_t_critical(draws, estimates, ses, alpha: float = 0.1) -> float:
    """Empirical (1 - alpha) quantile of the replicate max-t statistics."""
    if not 0.0 < alpha < 1.0:
        raise InvalidInput("alpha must lie in (0, 1)")
    if np.any(np.asarray(ses) <= 0):
        raise InvalidInput("standard errors must be positive")
    return empirical_quantile(max_t_statistics(draws, estimates, ses), 1.0 - alpha)


@dataclass(frozen=True)
class UniformBand:
    region: np.ndarray
    center: np.ndarray
    se: np.ndarray
    critical: float
    lower: np.ndarray
    upper: np.ndarray
    alpha: float

    def covers(self, truth) -> bool:
        truth = np.asarray(truth, dtype=float)
        return bool(np.all((self.lower <= truth) & (truth <= self.upper)))


def uniform_band(region, estimates, ses, k_hat: float, alpha: float = 0.1,
                 clip: tuple | None = None) -> UniformBand:
    center = np.asarray(estimates, dtype=float)
    se = np.asarray(ses, dtype=float)
    lower, upper = center - k_hat * se, center + k_hat * se
    if clip is not None:
        lower, upper = np.clip(lower, *clip), np.clip(upper, *clip)
    return UniformBand(np.asarray(region), center, se, float(k_hat), lower, upper, alpha)


def surface_band(kind: str, region, estimates, draws, alpha: float = 0.1,
                 floor: float = SE_FLOOR) -> UniformBand:
    """Max-t uniform band for one surface; DSF bands are clipped to [0, 1].

    Points whose σ̂ sits at the floor carry no scale information and are left
    out of the supremum (their band collapses to the estimate).
    """
    se = pointwise_se(draws, floor)
    live = se > floor
    k = 0.0
    if live.any():
        draws = np.asarray(draws, dtype=float).reshape(len(draws), -1)
        k = max_t_critical(draws[:, live], np.asarray(estimates)[live], se[live], alpha)
    return uniform_band(region, estimates, se, k, alpha, (0.0, 1.0) if kind == "DSF" else None)


def qsf_band(region, estimates, draws, alpha: float = 0.1,
             floor: float = SE_FLOOR) -> UniformBand:
    """Continuous-outcome QSF band, rearranged to be nondecreasing in τ.

    ``region`` rows are (τ, x) with τ varying fastest within each x.
    """
    band = surface_band("QSF", region, estimates, draws, alpha, floor)
    taus = np.unique(np.asarray(region)[:, 0])
    shape = (-1, taus.shape[0])

    def sort(a):
        return rearrange_monotone(a.reshape(shape), axis=1).ravel()

    lower, center, upper = sort(band.lower), sort(band.center), sort(band.upper)
    assert np.all(np.diff(lower.reshape(shape), axis=1) >= 0)
    return UniformBand(band.region, center, band.se, band.critical, lower, upper, alpha)


def _left_inverse(G, ys, tau):
    hit = np.flatnonzero(G >= tau)
    return ys[hit[0]] if hit.shape[0] else np.nan


def qsf_band_discrete(dsf_band: UniformBand, taus, alpha: float = 0.1) -> UniformBand:
    """Invert a DSF band on the outcome support into a QSF band.

    ``dsf_band.region`` rows are (y, x) with y running over the support
    fastest. At each (τ, x): center = Ĝ^←(τ), lower = Ĝ_U^←(τ) and
    upper = Ĝ_L^←(τ). Points where τ is not attained by the lower DSF edge
    are dropped with a warning.
    """
    reg = np.asarray(dsf_band.region)
    xs = np.unique(reg[:, 1])
    region, center, lower, upper = [], [], [], []
    dropped = 0
    for x in xs:
        rows = reg[:, 1] == x
        ys = reg[rows, 0]
        order = np.argsort(ys)
        ys = ys[order]
        G = dsf_band.center[rows][order]
        GL = dsf_band.lower[rows][order]
        GU = dsf_band.upper[rows][order]
        for t in np.asarray(taus, dtype=float):
            c, lo, hi = (_left_inverse(g, ys, t) for g in (G, GU, GL))
            if np.isnan(hi) or np.isnan(c):
                dropped += 1
                continue
            region.append((t, x))
            center.append(c)
            lower.append(lo)
            upper.append(hi)
    if dropped:
        warnings.warn(f"discrete QSF band: dropped {dropped} point(s) not attained by the DSF band")
    n = len(center)
    return UniformBand(np.array(region).reshape(n, 2), np.array(center), np.full(n, np.nan),
                       dsf_band.critical, np.array(lower), np.array(upper), alpha)


def bands(estimate_surfaces: dict, ensemble: BootstrapEnsemble, alpha: float = 0.1,
          y_discrete: bool = False, floor: float = SE_FLOOR) -> dict:
    """Uniform bands for every surface in an estimate, keyed like the surfaces."""
    out = {}
    for name, surf in estimate_surfaces.items():
        draws = ensemble.draws[name]
        if surf.kind == "QSF":
            if y_discrete:
                dsf_name = "DSF" + name[3:]
                dsf = estimate_surfaces[dsf_name]
                db = surface_band("DSF", dsf.region, dsf.estimates, ensemble.draws[dsf_name],
                                  alpha, floor)
                taus = np.unique(surf.region[:, 0])
                out[name] = qsf_band_discrete(db, taus, alpha)
            else:
                out[name] = qsf_band(surf.region, surf.estimates, draws, alpha, floor)
        else:
            out[name] = surface_band(surf.kind, surf.region, surf.estimates, draws, alpha, floor)
    return out


def default_workers() -> int:
    return max(1, len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity")
               else os.cpu_count() or 1)
