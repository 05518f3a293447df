"""Monte Carlo orchestration over conditional trajectories.

Ensembles run in fixed-size chunks of trajectories.  Chunk boundaries and
per-trajectory noise streams depend only on ``(seed, trajectory_index)``,
and chunk results are reduced in index order, so the output is
byte-identical no matter how many worker processes execute the chunks
(``PUREBATH_WORKERS`` sets the default).  Statistics are accumulated in a
single pass with Chan-style combination of per-chunk means and second
moments.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .analytics import BathParams, compute_coefficients
from .fock import FockDensityMatrix, evolve_conditional
from .moments import GaussianMoments, SimConfig, _advance_mean, integrate_covariance
from .noise import NoiseStream, generate_increments

__all__ = [
    "EnsembleError",
    "EnsembleStats",
    "NoiseStream",
    "generate_increments",
    "run_ensemble",
    "WORKERS_ENV",
]

WORKERS_ENV = "PUREBATH_WORKERS"
_DEFAULT_CHUNK = {"gaussian": 128, "fock": 256}


class EnsembleError(RuntimeError):
    """Too many trajectories failed for the ensemble to be trusted."""


@dataclass
class EnsembleStats:
    """Cross-trajectory aggregates on the simulation time grid.

    ``var_mean_*`` is the variance of the conditional means across
    trajectories (the classical spread the measurement record introduces);
    together with ``mean_var_*`` it recovers the unconditional variance.
    Standard errors refer to the means of the conditional means.
    """

    n_traj: int
    representation: str
    times: np.ndarray
    mean_mean_x: np.ndarray
    mean_mean_p: np.ndarray
    var_mean_x: np.ndarray
    var_mean_p: np.ndarray
    stderr_mean_x: np.ndarray
    stderr_mean_p: np.ndarray
    mean_var_x: np.ndarray
    mean_var_p: np.ndarray
    mean_cov_xp: np.ndarray
    averaged_rho: np.ndarray | None = None
    final_states: np.ndarray | None = None
    n_failed: int = 0
    failures: list[tuple[int, str]] = field(default_factory=list)


@dataclass
class _ChunkResult:
    count: int
    sum_x: np.ndarray
    sumsq_x: np.ndarray
    sum_p: np.ndarray
    sumsq_p: np.ndarray
    sum_var_x: np.ndarray | None
    sum_var_p: np.ndarray | None
    sum_cov_xp: np.ndarray | None
    rho_sum: np.ndarray | None
    finals: np.ndarray | None
    failures: list[tuple[int, str]]


def _resolve_workers(n_workers: int | None) -> int:
    if n_workers is None:
        n_workers = int(os.environ.get(WORKERS_ENV, "1"))
    if n_workers < 1:
        raise ValueError("worker count must be at least 1")
    return n_workers


def _chunk_bounds(n_traj: int, chunk_size: int) -> list[tuple[int, int]]:
    return [(s, min(chunk_size, n_traj - s)) for s in range(0, n_traj, chunk_size)]


def _stack_increments(seed: int, start: int, size: int, n_steps: int, dt: float) -> np.ndarray:
    out = np.empty((size, n_steps, 2))
    for k in range(size):
        out[k] = generate_increments(NoiseStream(seed, start + k), n_steps, dt)
    return out


def _run_gaussian_chunk(task) -> _ChunkResult:
    p, cfg, start, size, init, gains = task
    n = cfg.n_steps
    dt = cfg.dt
    gxa, gxb, gpa, gpb = gains
    dw = _stack_increments(cfg.seed, start, size, n, dt)

    mx = np.full(size, init.mean_x)
    mp = np.full(size, init.mean_p)
    sum_x = np.zeros(n + 1)
    sumsq_x = np.zeros(n + 1)
    sum_p = np.zeros(n + 1)
    sumsq_p = np.zeros(n + 1)
    sum_x[0] = mx.sum()
    sumsq_x[0] = (mx * mx).sum()
    sum_p[0] = mp.sum()
    sumsq_p[0] = (mp * mp).sum()
    for i in range(n):
        mx = _advance_mean(mx, gxa[i], gxb[i], dw[:, i, 0], dw[:, i, 1], dt)
        mp = _advance_mean(mp, gpa[i], gpb[i], dw[:, i, 0], dw[:, i, 1], dt)
        sum_x[i + 1] = mx.sum()
        sumsq_x[i + 1] = (mx * mx).sum()
        sum_p[i + 1] = mp.sum()
        sumsq_p[i + 1] = (mp * mp).sum()
    # conditional covariances are shared by every trajectory; scale by count
    return _ChunkResult(
        count=size,
        sum_x=sum_x,
        sumsq_x=sumsq_x,
        sum_p=sum_p,
        sumsq_p=sumsq_p,
        sum_var_x=None,
        sum_var_p=None,
        sum_cov_xp=None,
        rho_sum=None,
        finals=None,
        failures=[],
    )


def _run_fock_chunk(task) -> _ChunkResult:
    p, cfg, start, size, rho0, store_finals, eig_interval = task
    n = cfg.n_steps
    dt = cfg.dt
    coeffs = compute_coefficients(p)
    dw = _stack_increments(cfg.seed, start, size, n, dt)
    batch = np.broadcast_to(rho0, (size,) + rho0.shape).copy()
    run = evolve_conditional(
        batch, coeffs, dt, dw,
        collect_moments=True,
        eig_check_interval=eig_interval,
    )
    failures = [(start + b, msg) for b, msg in run.failures]
    ok = np.ones(size, dtype=bool)
    for b, _ in run.failures:
        ok[b] = False

    m = run.moments
    mx = m["mean_x"][:, ok]
    mp_ = m["mean_p"][:, ok]
    return _ChunkResult(
        count=int(ok.sum()),
        sum_x=mx.sum(axis=1),
        sumsq_x=(mx * mx).sum(axis=1),
        sum_p=mp_.sum(axis=1),
        sumsq_p=(mp_ * mp_).sum(axis=1),
        sum_var_x=m["var_x"][:, ok].sum(axis=1),
        sum_var_p=m["var_p"][:, ok].sum(axis=1),
        sum_cov_xp=m["cov_xp"][:, ok].sum(axis=1),
        rho_sum=run.rho[ok].sum(axis=0),
        finals=run.rho[ok] if store_finals else None,
        failures=failures,
    )


def run_ensemble(
    p: BathParams,
    cfg: SimConfig,
    n_traj: int,
    representation: str = "gaussian",
    *,
    init: GaussianMoments | FockDensityMatrix | None = None,
    chunk_size: int | None = None,
    n_workers: int | None = None,
    store_final_states: bool = False,
    eig_check_interval: int = 200,
    max_failure_fraction: float = 0.01,
) -> EnsembleStats:
    """Run ``n_traj`` conditional trajectories and aggregate their statistics.

    ``representation`` selects the Gaussian-moment integrator or the
    truncated-Fock-space oracle (the latter needs ``cfg.dim`` unless an
    explicit ``FockDensityMatrix`` initial state is given; default initial
    state is the vacuum in both representations).  Per-trajectory failures
    are reported with their trajectory index; the ensemble aborts when more
    than ``max_failure_fraction`` of the trajectories fail.
    """
    if representation not in ("gaussian", "fock"):
        raise ValueError(f"unknown representation {representation!r}")
    if n_traj < 1:
        raise ValueError("need at least one trajectory")
    workers = _resolve_workers(n_workers)
    if chunk_size is None:
        chunk_size = _DEFAULT_CHUNK[representation]
    bounds = _chunk_bounds(n_traj, chunk_size)

    if representation == "gaussian":
        ginit = init if init is not None else GaussianMoments.vacuum()
        if not isinstance(ginit, GaussianMoments):
            raise TypeError("gaussian representation expects GaussianMoments init")
        coeffs = compute_coefficients(p)
        path = integrate_covariance(p, ginit, cfg)
        vx, cxp = path.var_x[:-1], path.cov_xp[:-1]
        gains = (
            coeffs.A1 * vx + coeffs.A2,
            coeffs.B1 * vx + coeffs.B2,
            coeffs.A1 * cxp,
            coeffs.B1 * cxp,
        )
        tasks = [(p, cfg, s, k, ginit, gains) for s, k in bounds]
        runner = _run_gaussian_chunk
    else:
        if isinstance(init, FockDensityMatrix):
            rho0 = init.rho
        elif init is None:
            if cfg.dim is None:
                raise ValueError("fock representation needs cfg.dim or an explicit init")
            rho0 = FockDensityMatrix.vacuum(cfg.dim).rho
        else:
            raise TypeError("fock representation expects FockDensityMatrix init")
        tasks = [
            (p, cfg, s, k, rho0, store_final_states, eig_check_interval)
            for s, k in bounds
        ]
        runner = _run_fock_chunk

    if workers == 1 or len(tasks) == 1:
        results = [runner(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(runner, tasks))

    return _reduce(results, p, cfg, representation, path if representation == "gaussian" else None,
                   n_traj, max_failure_fraction, store_final_states)


def _reduce(results, p, cfg, representation, cov_path, n_traj, max_failure_fraction,
            store_finals) -> EnsembleStats:
    failures: list[tuple[int, str]] = []
    for r in results:
        failures.extend(r.failures)
    n_failed = len(failures)
    if n_failed > max_failure_fraction * n_traj:
        detail = "; ".join(f"#{i}: {msg}" for i, msg in failures[:5])
        raise EnsembleError(
            f"{n_failed}/{n_traj} trajectories failed "
            f"(> {max_failure_fraction:.0%} allowed): {detail}"
        )

    count = sum(r.count for r in results)
    sum_x = sum(r.sum_x for r in results)
    sumsq_x = sum(r.sumsq_x for r in results)
    sum_p = sum(r.sum_p for r in results)
    sumsq_p = sum(r.sumsq_p for r in results)

    mean_x = sum_x / count
    mean_p = sum_p / count
    if count > 1:
        var_x = np.maximum(sumsq_x - count * mean_x**2, 0.0) / (count - 1)
        var_p = np.maximum(sumsq_p - count * mean_p**2, 0.0) / (count - 1)
    else:
        var_x = np.zeros_like(mean_x)
        var_p = np.zeros_like(mean_p)

    if representation == "gaussian":
        mean_var_x = cov_path.var_x
        mean_var_p = cov_path.var_p
        mean_cov_xp = cov_path.cov_xp
        times = cov_path.times
        averaged_rho = None
        finals = None
    else:
        mean_var_x = sum(r.sum_var_x for r in results) / count
        mean_var_p = sum(r.sum_var_p for r in results) / count
        mean_cov_xp = sum(r.sum_cov_xp for r in results) / count
        times = np.arange(cfg.n_steps + 1) * cfg.dt
        averaged_rho = sum(r.rho_sum for r in results) / count
        finals = np.concatenate([r.finals for r in results]) if store_finals else None

    return EnsembleStats(
        n_traj=count,
        representation=representation,
        times=times,
        mean_mean_x=mean_x,
        mean_mean_p=mean_p,
        var_mean_x=var_x,
        var_mean_p=var_p,
        stderr_mean_x=np.sqrt(var_x / count),
        stderr_mean_p=np.sqrt(var_p / count),
        mean_var_x=mean_var_x,
        mean_var_p=mean_var_p,
        mean_cov_xp=mean_cov_xp,
        averaged_rho=averaged_rho,
        final_states=finals,
        n_failed=n_failed,
        failures=failures,
    )
