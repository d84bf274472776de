"""Empirical distributions against oracle curves: ECDF, KS distance,
DKW bands and per-point z-scores."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class InsufficientDataError(ValueError):
    pass


def dkw_epsilon(N: int, alpha: float = 0.05) -> float:
    """Half-width of the two-sided DKW band at level ``1 - alpha``."""
    return math.sqrt(math.log(2.0 / alpha) / (2.0 * N))


@dataclass
class EmpiricalDist:
    """Sorted uncensored values plus a count of right-censored ones.

    Censored observations are known only to exceed every value of interest;
    they stay in the denominator of the ECDF.
    """

    values: np.ndarray
    censored: int = 0

    def __post_init__(self):
        v = np.sort(np.asarray(self.values, dtype=float))
        if np.any(~np.isfinite(v)):
            raise ValueError("censored observations must be counted, not passed as values")
        self.values = v
        self.censored = int(self.censored)

    @classmethod
    def from_observations(cls, obs: Sequence[float | None]) -> "EmpiricalDist":
        vals = [o for o in obs if o is not None and math.isfinite(o)]
        return cls(np.array(vals, dtype=float), len(obs) - len(vals))

    @property
    def N(self) -> int:
        return len(self.values) + self.censored

    @property
    def censoring_rate(self) -> float:
        return self.censored / self.N if self.N else 0.0

    def ecdf(self, x) -> np.ndarray:
        """Right-continuous ECDF ``#(values <= x) / N``."""
        return np.searchsorted(self.values, np.asarray(x, dtype=float), side="right") / self.N


def compare(emp: EmpiricalDist, oracle_curve, alpha: float = 0.05, oracle_N: int | None = None,
            min_samples: int = 100) -> dict:
    """KS distance on the oracle grid, DKW verdict and z-scores.

    ``oracle_curve`` is a sequence of ``(x, F(x), stderr)`` with ``F`` the
    oracle CDF. When ``oracle_N`` is given the oracle is itself Monte Carlo
    and its own DKW half-width is added to the band.
    """
    if len(emp.values) < min_samples:
        raise InsufficientDataError(f"need >= {min_samples} uncensored samples, got {len(emp.values)}")
    arr = np.asarray(oracle_curve, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 3 or len(arr) == 0:
        raise ValueError("oracle curve must be rows of (x, value, stderr)")
    x, F, se = arr[:, 0], arr[:, 1], arr[:, 2]
    Fe = emp.ecdf(x)
    diff = Fe - F
    ks = float(np.max(np.abs(diff)))
    var = Fe * (1 - Fe) / emp.N + se * se
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(var > 0, diff / np.sqrt(var), np.where(diff == 0, 0.0, np.inf))
    eps = dkw_epsilon(emp.N, alpha)
    if oracle_N:
        eps += dkw_epsilon(oracle_N, alpha)
    return {
        "KS": ks,
        "argmax_x": float(x[int(np.argmax(np.abs(diff)))]),
        "max_abs_z": float(np.max(np.abs(z))),
        "dkw_eps": eps,
        "dkw_pass": bool(ks <= eps),
        "N": emp.N,
        "censored": emp.censored,
        "censoring_rate": emp.censoring_rate,
    }


def ks_allowance(N_emp: int, N_oracle: int | None, alpha: float = 0.05) -> float:
    """Two-sample style allowance ``c(alpha) sqrt(1/N + 1/N_oracle)``."""
    c = math.sqrt(math.log(2.0 / alpha) / 2.0)
    inv = 1.0 / N_emp + (1.0 / N_oracle if N_oracle else 0.0)
    return c * math.sqrt(inv)
