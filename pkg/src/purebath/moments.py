"""Conditional Gaussian dynamics of the monitored mode.

Under continuous homodyne monitoring of the (partially purified) bath the
system state stays Gaussian, so the full conditional dynamics splits into

* a deterministic quadratic (Riccati) flow of the second moments
  ``(var_x, var_p, cov_xp)``, independent of the measurement record, and
* a linear stochastic equation for the means, driven by the two
  decorrelated Wiener increments with state-dependent noise gains.

The measurement records are synthesised alongside:
``sqrt(dt) * qA = <X> dt + dwA`` and ``sqrt(dt) * qB = dwB`` with the
correlated pair ``(dwA, dwB) = M (dwA_tilde, dwB_tilde)``.

Time is measured in units of the inverse damping rate throughout.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .analytics import BathParams, UnravellingCoefficients, compute_coefficients
from .noise import NoiseStream, generate_increments

__all__ = [
    "GaussianMoments",
    "SimConfig",
    "TrajectoryRecord",
    "CovariancePath",
    "StepSizeError",
    "NonconvergenceWarning",
    "unconditional_moment_step",
    "variance_drift",
    "integrate_covariance",
    "simulate_trajectory",
]

# residual |dV/dt| above which a finished integration is flagged as not
# having reached the fixed point
CONVERGENCE_RESIDUAL = 1e-8


class StepSizeError(RuntimeError):
    """The covariance integrator produced a non-positive variance (dt too large)."""


class NonconvergenceWarning(RuntimeWarning):
    """The covariance integration ended before reaching its fixed point."""


@dataclass
class GaussianMoments:
    """First and second conditional moments of ``X = c + c^dag``, ``P = -i(c - c^dag)``.

    Convention: ``var_x = <X^2> - <X>^2``, so the vacuum has
    ``var_x = var_p = 1`` and the Heisenberg bound reads
    ``var_x * var_p - cov_xp^2 >= 1``.
    """

    mean_x: float = 0.0
    mean_p: float = 0.0
    var_x: float = 1.0
    var_p: float = 1.0
    cov_xp: float = 0.0

    @classmethod
    def vacuum(cls) -> "GaussianMoments":
        return cls()

    @classmethod
    def thermal(cls, N: float) -> "GaussianMoments":
        occ = 2.0 * N + 1.0
        return cls(0.0, 0.0, occ, occ, 0.0)

    def heisenberg_defect(self) -> float:
        """``var_x*var_p - cov_xp^2 - 1``; negative beyond tolerance is unphysical."""
        return self.var_x * self.var_p - self.cov_xp**2 - 1.0

    def validate(self, eps: float = 1e-9) -> None:
        if not (self.var_x > 0.0 and self.var_p > 0.0):
            raise ValueError("variances must be strictly positive")
        if self.heisenberg_defect() < -eps:
            raise ValueError(
                f"moments violate the uncertainty bound by {-self.heisenberg_defect():.3e}"
            )


@dataclass(frozen=True)
class SimConfig:
    """Numerical configuration shared by the integrators.

    ``sde_scheme`` applies to the stochastic mean update (only
    Euler-Maruyama is implemented), ``ode_scheme`` to the deterministic
    covariance flow.  ``dim`` is only consulted by Fock-space runs.
    """

    dt: float = 1e-3
    t_final: float = 30.0
    seed: int = 0
    sde_scheme: str = "euler_maruyama"
    ode_scheme: str = "rk4"
    dim: int | None = None

    def __post_init__(self) -> None:
        if not self.dt > 0.0:
            raise ValueError("dt must be positive")
        if not self.t_final >= self.dt:
            raise ValueError("t_final must be at least one step long")
        if self.seed < 0:
            raise ValueError("seed must be a non-negative integer")
        if self.sde_scheme != "euler_maruyama":
            raise ValueError(f"unknown SDE scheme {self.sde_scheme!r}")
        if self.ode_scheme not in ("euler", "rk4"):
            raise ValueError(f"unknown ODE scheme {self.ode_scheme!r}")
        if self.dim is not None and self.dim < 2:
            raise ValueError("Fock dimension must be at least 2")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))


@dataclass
class CovariancePath:
    """Deterministic covariance history ``(times[i], var_x[i], var_p[i], cov_xp[i])``."""

    times: np.ndarray
    var_x: np.ndarray
    var_p: np.ndarray
    cov_xp: np.ndarray
    residual_drift: float
    converged: bool

    def __len__(self) -> int:
        return len(self.times)

    def __iter__(self):
        return zip(self.times, self.var_x, self.var_p, self.cov_xp)


@dataclass
class TrajectoryRecord:
    """One conditional trajectory: moments, records and the noises that drove it.

    All arrays share length ``n_steps + 1``; row ``i > 0`` holds the state
    at ``times[i]`` together with the increments of the step that ended
    there (row 0 carries zeros in the increment columns).  ``record_qA`` /
    ``record_qB`` store the scaled homodyne outcomes ``sqrt(dt) * q``.
    """

    times: np.ndarray
    mean_x: np.ndarray
    mean_p: np.ndarray
    var_x: np.ndarray
    var_p: np.ndarray
    cov_xp: np.ndarray
    record_qA: np.ndarray
    record_qB: np.ndarray
    noise_wA: np.ndarray
    noise_wB: np.ndarray
    params: BathParams = field(repr=False, default=None)
    config: SimConfig = field(repr=False, default=None)

    def __len__(self) -> int:
        return len(self.times)

    def moments_at(self, i: int) -> GaussianMoments:
        return GaussianMoments(
            self.mean_x[i], self.mean_p[i], self.var_x[i], self.var_p[i], self.cov_xp[i]
        )


def unconditional_moment_step(m: GaussianMoments, N: float, dt: float) -> GaussianMoments:
    """One explicit Euler step of the record-averaged moment equations.

    Means damp at rate 1/2, both variances relax towards the thermal value
    ``2N+1`` and the cross covariance towards 0.
    """
    occ = 2.0 * N + 1.0
    return GaussianMoments(
        mean_x=m.mean_x - 0.5 * dt * m.mean_x,
        mean_p=m.mean_p - 0.5 * dt * m.mean_p,
        var_x=m.var_x + dt * (occ - m.var_x),
        var_p=m.var_p + dt * (occ - m.var_p),
        cov_xp=m.cov_xp - dt * m.cov_xp,
    )


def variance_drift(
    v: tuple[float, float, float],
    coeffs: UnravellingCoefficients,
    N: float,
) -> tuple[float, float, float]:
    """Deterministic drift of ``(var_x, var_p, cov_xp)`` per unit time.

    The x-variance loses ``(A1*Vx + A2)^2 + (B1*Vx + B2)^2`` to the
    measurement back-action; the p-channel noise gains are ``A1*cov_xp``
    and ``B1*cov_xp`` (no additive constant: both trace formulas against
    ``P`` reduce to the cross covariance), which fixes the ``var_p`` and
    ``cov_xp`` equations.
    """
    var_x, var_p, cov_xp = v
    occ = 2.0 * N + 1.0
    gxa = coeffs.A1 * var_x + coeffs.A2
    gxb = coeffs.B1 * var_x + coeffs.B2
    gpa = coeffs.A1 * cov_xp
    gpb = coeffs.B1 * cov_xp
    return (
        occ - var_x - gxa * gxa - gxb * gxb,
        occ - var_p - gpa * gpa - gpb * gpb,
        -cov_xp - gxa * gpa - gxb * gpb,
    )


def _advance_mean(m, g1, g2, dw1, dw2, dt):
    # shared between the scalar and the ensemble (vectorised) paths so both
    # produce bit-identical trajectories
    return m + (g1 * dw1 + g2 * dw2 - 0.5 * dt * m)


def integrate_covariance(
    p: BathParams,
    init: GaussianMoments,
    cfg: SimConfig,
) -> CovariancePath:
    """Integrate the deterministic covariance flow on a uniform grid.

    Raises ``StepSizeError`` if the x-variance is driven to zero or below,
    and emits ``NonconvergenceWarning`` when the residual drift at
    ``t_final`` exceeds ``1e-8`` (the flow contracts at unit rate, so the
    default ``t_final = 30`` converges from any sensible initial state).
    """
    init.validate()
    coeffs = compute_coefficients(p)
    a1, a2, b1, b2 = coeffs.A1, coeffs.A2, coeffs.B1, coeffs.B2
    occ = 2.0 * p.N + 1.0
    dt = cfg.dt
    n = cfg.n_steps

    times = np.arange(n + 1) * dt
    out = np.empty((n + 1, 3))
    vx, vp, cxp = init.var_x, init.var_p, init.cov_xp
    out[0] = vx, vp, cxp

    def drift(x, y, z):
        gxa = a1 * x + a2
        gxb = b1 * x + b2
        gpa = a1 * z
        gpb = b1 * z
        return (
            occ - x - gxa * gxa - gxb * gxb,
            occ - y - gpa * gpa - gpb * gpb,
            -z - gxa * gpa - gxb * gpb,
        )

    use_rk4 = cfg.ode_scheme == "rk4"
    half = 0.5 * dt
    sixth = dt / 6.0
    for i in range(1, n + 1):
        if use_rk4:
            k1 = drift(vx, vp, cxp)
            k2 = drift(vx + half * k1[0], vp + half * k1[1], cxp + half * k1[2])
            k3 = drift(vx + half * k2[0], vp + half * k2[1], cxp + half * k2[2])
            k4 = drift(vx + dt * k3[0], vp + dt * k3[1], cxp + dt * k3[2])
            vx += sixth * (k1[0] + 2.0 * (k2[0] + k3[0]) + k4[0])
            vp += sixth * (k1[1] + 2.0 * (k2[1] + k3[1]) + k4[1])
            cxp += sixth * (k1[2] + 2.0 * (k2[2] + k3[2]) + k4[2])
        else:
            k1 = drift(vx, vp, cxp)
            vx += dt * k1[0]
            vp += dt * k1[1]
            cxp += dt * k1[2]
        if vx <= 0.0:
            raise StepSizeError(
                f"var_x <= 0 at t = {times[i]:.6g}; reduce dt (got {dt:g})"
            )
        out[i] = vx, vp, cxp

    residual = max(abs(d) for d in drift(vx, vp, cxp))
    converged = residual <= CONVERGENCE_RESIDUAL
    if not converged:
        warnings.warn(
            f"covariance flow not stationary at t_final = {cfg.t_final:g} "
            f"(residual drift {residual:.3e})",
            NonconvergenceWarning,
            stacklevel=2,
        )
    return CovariancePath(
        times=times,
        var_x=out[:, 0],
        var_p=out[:, 1],
        cov_xp=out[:, 2],
        residual_drift=residual,
        converged=converged,
    )


def simulate_trajectory(
    p: BathParams,
    init: GaussianMoments,
    cfg: SimConfig,
    trajectory_index: int = 0,
    _cov_path: CovariancePath | None = None,
) -> TrajectoryRecord:
    """Simulate one conditional trajectory (means, covariance, records).

    The covariance evolves deterministically; the means follow an
    Euler-Maruyama recursion driven by the trajectory's own Philox stream,
    so the output is reproducible byte-for-byte from
    ``(params, config, init, trajectory_index)``.
    """
    coeffs = compute_coefficients(p)
    path = _cov_path if _cov_path is not None else integrate_covariance(p, init, cfg)
    n = cfg.n_steps
    dt = cfg.dt

    dw_tilde = generate_increments(
        NoiseStream(cfg.seed, trajectory_index), n, dt, correlated=False
    )
    dw_corr = dw_tilde @ coeffs.mixing.T

    mean_x = np.empty(n + 1)
    mean_p = np.empty(n + 1)
    record_qA = np.zeros(n + 1)
    record_qB = np.zeros(n + 1)
    mx, mp = init.mean_x, init.mean_p
    mean_x[0], mean_p[0] = mx, mp

    a1, a2, b1, b2 = coeffs.A1, coeffs.A2, coeffs.B1, coeffs.B2
    vx = path.var_x
    cxp = path.cov_xp
    for i in range(n):
        dwa, dwb = dw_tilde[i, 0], dw_tilde[i, 1]
        # records use the pre-step mean, matching the conditioning order
        record_qA[i + 1] = mx * dt + dw_corr[i, 0]
        record_qB[i + 1] = dw_corr[i, 1]
        mx = _advance_mean(mx, a1 * vx[i] + a2, b1 * vx[i] + b2, dwa, dwb, dt)
        mp = _advance_mean(mp, a1 * cxp[i], b1 * cxp[i], dwa, dwb, dt)
        mean_x[i + 1], mean_p[i + 1] = mx, mp

    noise_wA = np.zeros(n + 1)
    noise_wB = np.zeros(n + 1)
    noise_wA[1:] = dw_tilde[:, 0]
    noise_wB[1:] = dw_tilde[:, 1]

    return TrajectoryRecord(
        times=path.times,
        mean_x=mean_x,
        mean_p=mean_p,
        var_x=path.var_x,
        var_p=path.var_p,
        cov_xp=path.cov_xp,
        record_qA=record_qA,
        record_qB=record_qB,
        noise_wA=noise_wA,
        noise_wB=noise_wB,
        params=p,
        config=cfg,
    )
