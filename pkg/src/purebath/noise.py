"""Reproducible Wiener-increment streams for trajectory simulation.

Each trajectory owns a counter-based Philox stream keyed by
``(seed, trajectory_index)`` through numpy's ``SeedSequence`` spawn
mechanism, so ensembles can be generated in any order, split across any
number of workers, and still produce identical numbers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .analytics import UnravellingCoefficients

__all__ = ["NoiseStream", "generate_increments"]


@dataclass(frozen=True)
class NoiseStream:
    """Identity of one trajectory's noise source."""

    seed: int
    trajectory_index: int = 0

    def __post_init__(self) -> None:
        if self.seed < 0 or self.trajectory_index < 0:
            raise ValueError("seed and trajectory_index must be non-negative")

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream."""
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.trajectory_index,))
        return np.random.Generator(np.random.Philox(ss))


def generate_increments(
    stream: NoiseStream,
    n_steps: int,
    dt: float,
    correlated: bool = False,
    coeffs: UnravellingCoefficients | None = None,
) -> np.ndarray:
    """Draw ``(n_steps, 2)`` Wiener increments for one trajectory.

    Uncorrelated increments are independent zero-mean Gaussians with
    variance ``dt`` per component.  With ``correlated=True`` they are mixed
    through the matrix ``M`` of ``coeffs`` (``dw = M dw_tilde``) so their
    covariance per step is ``outcome_cov * dt``.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    dw = stream.generator().standard_normal((n_steps, 2)) * math.sqrt(dt)
    if correlated:
        if coeffs is None:
            raise ValueError("correlated increments need the unravelling coefficients")
        dw = dw @ coeffs.mixing.T
    return dw
