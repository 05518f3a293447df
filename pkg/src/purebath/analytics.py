"""Closed-form analytics for homodyne filtering of a thermally damped mode.

The bath seen by the mode is modelled as one arm of a two-mode Gaussian
state whose inter-mode correlations are controlled by a purification
parameter ``gamma``: ``gamma = 0`` leaves two uncorrelated thermal modes,
``gamma = 1`` makes the pair a pure two-mode squeezed vacuum.  Monitoring
both arms by homodyne detection conditions the system state, and because
everything is Gaussian the whole conditional problem reduces to a handful
of scalar coefficients.  This module computes those coefficients and the
steady-state quantities that follow from them in closed form:

* the record covariance ``C`` of the two homodyne outcomes and the
  symmetric mixing matrix ``M`` with ``C = M @ M.T`` that decorrelates
  the measurement noises,
* the weights of the annihilation/creation operators in each decorrelated
  measurement channel, and the drift/noise coefficients ``A1, A2, B1, B2``
  of the conditional X-quadrature mean,
* the steady-state conditional variance, the squeezing threshold in
  ``gamma``, the optimal occupation ``N`` at fixed ``gamma``, and the
  steady-state purity.

All functions are pure and thread-safe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "BathParams",
    "UnravellingCoefficients",
    "compute_coefficients",
    "steady_state_variance",
    "squeezing_bound",
    "gamma_threshold",
    "min_variance_over_N",
    "steady_state_purity",
]

_INV_SQRT2 = math.sqrt(0.5)


@dataclass(frozen=True)
class BathParams:
    """Physical knobs of the monitored bath.

    Attributes
    ----------
    N:
        Mean thermal photon number of the bath mode coupled to the system
        (dimensionless, >= 0).
    gamma:
        Purification parameter in ``[0, 1]``; it scales the correlations
        between the bath mode and its (partially lost) purifying partner.
    """

    N: float
    gamma: float

    def __post_init__(self) -> None:
        # "not >=" also rejects NaN
        if not self.N >= 0.0:
            raise ValueError(f"thermal occupation N must be >= 0, got {self.N}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")


@dataclass(frozen=True)
class UnravellingCoefficients:
    """Every scalar/matrix derived from ``BathParams`` that the dynamics needs.

    ``f`` is the square-root determinant of the two-mode bath covariance,
    ``h1``/``h2`` weight the annihilation/creation contributions of the
    directly monitored record, ``m_plus``/``m_minus`` build the symmetric
    mixing matrix ``M`` with ``outcome_cov = M @ M.T``.  ``alpha_*`` and
    ``beta_*`` are the weights of ``c`` and ``c^dag`` in the two
    decorrelated measurement channels, and ``A1, A2, B1, B2`` are the
    resulting noise coefficients of the conditional mean of ``X = c + c^dag``
    (noise term ``(A1*Vx + A2) dwA + (B1*Vx + B2) dwB``).

    Identities maintained for all valid parameters:

    * ``h1*(N+1) + h2*N = 2N+1`` and ``h2*N - h1*(N+1) = -f``
    * ``A1**2 + B1**2 = (2N+1)/f``, ``A1*A2 + B1*B2 = -1``,
      ``A2**2 + B2**2 = 2N+1``
    """

    params: BathParams
    f: float
    h1: float
    h2: float
    m_plus: float
    m_minus: float
    outcome_cov: np.ndarray
    mixing: np.ndarray
    alpha_A: float
    beta_A: float
    alpha_B: float
    beta_B: float
    A1: float
    A2: float
    B1: float
    B2: float


def compute_coefficients(p: BathParams) -> UnravellingCoefficients:
    """Evaluate all unravelling coefficients for the given bath parameters.

    The channel weights come from regrouping the conditional update in
    terms of uncorrelated noises: channel A applies
    ``alpha_A * c + beta_A * c^dag``, channel B the same with
    ``m_plus <-> m_minus`` swapped.  The mean-SDE coefficients follow from
    the trace identities ``Tr[H[c] rho X] = Vx - 1`` and
    ``Tr[H[c^dag] rho X] = Vx + 1``, which give ``A1 = alpha_A + beta_A``
    and ``A2 = beta_A - alpha_A`` (so ``A2 = -m_plus``, ``B2 = -m_minus``;
    with the opposite sign the variance flow would have no positive fixed
    point).
    """
    N, gamma = p.N, p.gamma
    n_plus_1 = N + 1.0
    occ = 2.0 * N + 1.0
    g = gamma * math.sqrt(N * n_plus_1)

    f = 1.0 + 4.0 * N * n_plus_1 * (1.0 - gamma**2)
    h1 = 1.0 + 2.0 * N * (1.0 - gamma**2)
    h2 = 2.0 * gamma**2 - 1.0 + 2.0 * N * (gamma**2 - 1.0)
    sqrt_f = math.sqrt(f)

    m_plus = math.sqrt(0.5 * (occ + sqrt_f))
    # (1+2N-sqrt(f))/2 rewritten to avoid cancellation for small gamma^2*N;
    # exact zero at gamma = 0.
    m_minus = gamma * math.sqrt(2.0 * N * n_plus_1 / (occ + sqrt_f))

    outcome_cov = np.array([[occ, 2.0 * g], [2.0 * g, occ]])
    mixing = np.array([[m_plus, m_minus], [m_minus, m_plus]])

    alpha_A = (m_plus * h1 * n_plus_1 - m_minus * g) / f
    beta_A = (m_plus * h2 * N - m_minus * g) / f
    alpha_B = (m_minus * h1 * n_plus_1 - m_plus * g) / f
    beta_B = (m_minus * h2 * N - m_plus * g) / f

    return UnravellingCoefficients(
        params=p,
        f=f,
        h1=h1,
        h2=h2,
        m_plus=m_plus,
        m_minus=m_minus,
        outcome_cov=outcome_cov,
        mixing=mixing,
        alpha_A=alpha_A,
        beta_A=beta_A,
        alpha_B=alpha_B,
        beta_B=beta_B,
        A1=alpha_A + beta_A,
        A2=beta_A - alpha_A,
        B1=alpha_B + beta_B,
        B2=beta_B - alpha_B,
    )


def steady_state_variance(p: BathParams) -> float:
    """Steady-state conditional variance of ``X = c + c^dag``.

    Equals ``2N+1 - gamma^2 * 4N(N+1)/(2N+1)``, i.e. ``f/(2N+1)``: it
    interpolates monotonically between the thermal variance ``2N+1`` at
    ``gamma = 0`` and the optimal value ``1/(2N+1)`` at ``gamma = 1``.
    """
    N, gamma = p.N, p.gamma
    f = 1.0 + 4.0 * N * (N + 1.0) * (1.0 - gamma**2)
    return f / (2.0 * N + 1.0)


def squeezing_bound(N: float) -> float:
    """Smallest steady-state variance any record-driven dynamics can reach.

    Returns ``1/(2N+1)``; ``steady_state_variance`` saturates it at
    ``gamma = 1``.
    """
    if not N >= 0.0:
        raise ValueError(f"thermal occupation N must be >= 0, got {N}")
    return 1.0 / (2.0 * N + 1.0)


def gamma_threshold(N: float) -> float:
    """Purification needed before the steady state is squeezed (``Vx < 1``).

    ``gamma_th = sqrt((2N+1)/(2(N+1)))``; it grows from ``1/sqrt(2)`` at
    ``N = 0`` towards 1 for hot baths, and
    ``steady_state_variance(N, gamma_th(N)) = 1`` identically.
    """
    if not N >= 0.0:
        raise ValueError(f"thermal occupation N must be >= 0, got {N}")
    return math.sqrt((2.0 * N + 1.0) / (2.0 * N + 2.0))


def min_variance_over_N(gamma: float) -> tuple[float, float]:
    """Minimise the steady-state variance over the thermal occupation.

    For ``gamma <= 1/sqrt(2)`` the variance is increasing in ``N`` and the
    infimum ``(v_min, n_opt) = (1, 0)`` sits at zero temperature.  Above
    that the optimum moves to ``n_opt = (gamma/sqrt(1-gamma^2) - 1)/2``
    with value ``v_min = 2*gamma*sqrt(1-gamma^2)``.  At ``gamma = 1`` the
    variance decreases indefinitely with ``N``; the sentinel
    ``(0, inf)`` is returned.
    """
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    if gamma <= _INV_SQRT2:
        return 1.0, 0.0
    if gamma == 1.0:
        return 0.0, math.inf
    root = math.sqrt(1.0 - gamma**2)
    return 2.0 * gamma * root, 0.5 * (gamma / root - 1.0)


def steady_state_purity(p: BathParams) -> float:
    """Purity of the steady-state conditional Gaussian state, ``1/sqrt(f)``.

    Equals ``1/sqrt(Vx_ss * Vp_ss)`` with ``Vp_ss = 2N+1``; it is 1 only
    for ``N = 0`` (any ``gamma``) or ``gamma = 1`` (any ``N``).
    """
    N, gamma = p.N, p.gamma
    f = 1.0 + 4.0 * N * (N + 1.0) * (1.0 - gamma**2)
    return 1.0 / math.sqrt(f)
