"""Continuous piecewise-linear mean process with slope change points."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .panel import scale_day

DEFAULT_Q_MAX = 2


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ChangePointConfig:
    """Number of change points per location."""

    q: tuple[int, ...]
    q_max: int = DEFAULT_Q_MAX

    def __post_init__(self):
        q = tuple(int(v) for v in self.q)
        object.__setattr__(self, "q", q)
        bad = [i for i, v in enumerate(q) if not 0 <= v <= self.q_max]
        if bad:
            raise ConfigError(f"change-point counts at locations {bad} outside [0, {self.q_max}]: {q}")

    @classmethod
    def parse(cls, text, q_max=DEFAULT_Q_MAX):
        try:
            q = tuple(int(v) for v in str(text).replace(" ", "").split(","))
        except ValueError as exc:
            raise ConfigError(f"bad change-point config {text!r}") from exc
        return cls(q, q_max)

    @classmethod
    def zeros(cls, M, q_max=DEFAULT_Q_MAX):
        return cls((0,) * M, q_max)

    @property
    def M(self):
        return len(self.q)

    @property
    def Q(self):
        return sum(self.q)

    @property
    def n_beta(self):
        return 2 * self.M + self.Q

    def increment(self, i):
        q = list(self.q)
        q[i] += 1
        return ChangePointConfig(tuple(q), self.q_max)

    def decrement(self, i):
        q = list(self.q)
        q[i] -= 1
        return ChangePointConfig(tuple(q), self.q_max)

    def beta_slices(self):
        """Slice of the stacked coefficient vector owned by each location."""
        out, start = [], 0
        for qi in self.q:
            out.append(slice(start, start + qi + 2))
            start += qi + 2
        return out

    def __str__(self):
        return ",".join(map(str, self.q))


def tau_bounds(tau, n_days, bound, gap):
    """Support check for the change points of one location.

    ``bound < tau_1``, ``tau_j + gap <= tau_{j+1}``, ``tau_q < N - bound``.
    """
    tau = np.asarray(tau, dtype=float)
    if tau.size == 0:
        return True
    if not (tau[0] > bound and tau[-1] < n_days - bound):
        return False
    return bool(np.all(np.diff(tau) >= gap))


def knot_scaled(tau, n_days):
    """Round change points up to whole days and map them onto scaled time."""
    return scale_day(np.ceil(np.asarray(tau, dtype=float)), n_days)


def hinge_columns(t_star, knots):
    """Slope columns for knots given in scaled time (already rounded).

    Column ``j`` is the portion of scaled time spent in segment ``j``, so
    its coefficient is that segment's slope.
    """
    knots = np.asarray(knots, dtype=float)
    q = knots.size
    if q == 0:
        return t_star[:, None].copy()
    cols = np.empty((t_star.size, q + 1))
    cols[:, 0] = np.minimum(t_star, knots[0])
    for j in range(1, q):
        cols[:, j] = np.clip(t_star - knots[j - 1], 0.0, knots[j] - knots[j - 1])
    cols[:, q] = np.maximum(0.0, t_star - knots[-1])
    return cols


def build_design(q_i, tau, t_star, bound=None, gap=None):
    """``N x (q_i + 2)`` design for one location.

    Parameters
    ----------
    q_i : int
    tau : array-like of length ``q_i``
        Change points in continuous day units.
    t_star : ndarray
        Scaled time axis.
    bound, gap : float, optional
        When given, ``tau`` is checked against the prior support.
    """
    tau = np.atleast_1d(np.asarray(tau, dtype=float)) if q_i else np.empty(0)
    if tau.size != q_i:
        raise ConfigError(f"expected {q_i} change points, got {tau.size}")
    n_days = t_star.size
    if np.any(np.diff(tau) <= 0):
        raise ConfigError(f"change points must be increasing: {tau}")
    if bound is not None and not tau_bounds(tau, n_days, bound, gap if gap is not None else 0.0):
        raise ConfigError(f"change points {tau} outside prior support")
    X = np.empty((n_days, q_i + 2))
    X[:, 0] = 1.0
    X[:, 1:] = hinge_columns(t_star, knot_scaled(tau, n_days))
    return X


def eval_mean(X_i, beta_i):
    X_i = np.asarray(X_i)
    beta_i = np.asarray(beta_i, dtype=float)
    if X_i.shape[1] != beta_i.size:
        raise ConfigError(f"design has {X_i.shape[1]} columns but beta has {beta_i.size}")
    return X_i @ beta_i


def mean_at(beta_i, knots, t_star):
    """Piecewise-linear mean evaluated directly, knots in scaled time."""
    beta_i = np.asarray(beta_i, dtype=float)
    return beta_i[0] + hinge_columns(np.asarray(t_star, float), knots) @ beta_i[1:]


def assemble_block_design(designs):
    """Sparse block-diagonal design for all locations."""
    n = {d.shape[0] for d in designs}
    if len(n) != 1:
        raise ConfigError(f"designs disagree on N: {sorted(n)}")
    return sp.block_diag(designs, format="csr")
