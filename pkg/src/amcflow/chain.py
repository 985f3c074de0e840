r"""Absorbing-chain analysis of a token context.

A context of n tokens is modelled as a chain whose states are the token
positions. Transitions only move forward (causal attention: position i can
jump to a later position j but never back), and the leftover mass of every
row escapes the context entirely. All escape mass is routed into a single
synthetic absorbing state appended after the context, so the transient part
Q is strictly upper triangular, every walk terminates, and (I - Q) is
invertible without any condition on the input.

From the decomposition we derive

* the expected-visit matrix ``N`` solving ``(I - Q) N = I``,
* ever-visit probabilities ``v_ij = N_ij / N_jj``,
* a per-token information score ``S(i) = -log v_{1,i}`` (how surprising it
  is that a walk from the first token reaches token i), and
* a per-token information loss ``S(i) * (1 - v_{i,n})`` (the share of that
  score which never reaches the final context token).

A Monte Carlo random-walk estimator of the ever-visit probabilities is
included purely as a verification oracle; it shares no linear algebra with
the analytic path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import ConfigurationError, InvariantViolation

ROW_SUM_TOL = 1e-9
DEFAULT_DELTA_ABS = 1e-6
DEFAULT_SCORE_CAP = 30.0


def _as_square_matrix(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, copy=True)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] < 1:
        raise InvariantViolation(
            f"{name} must be a square matrix with n >= 1, got shape {arr.shape}"
        )
    return arr


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ContextTransitionMatrix:
    """Row-stochastic forward-jump probabilities over a token context.

    ``p[i, j]`` for j > i is the probability of jumping from position i
    directly to position j; ``p[i, i]`` holds the mass that leaves the
    context ("none of the following tokens"). Entries below the diagonal
    are exactly zero.
    """

    p: np.ndarray

    def __post_init__(self):
        p = _as_square_matrix(self.p, "transition matrix")
        n = p.shape[0]
        if np.any(np.tril(p, k=-1) != 0.0):
            bad = int(np.argwhere(np.tril(p, k=-1) != 0.0)[0][0])
            raise InvariantViolation(
                f"transition matrix row {bad} has nonzero mass before the diagonal"
            )
        if np.any(p < 0.0) or np.any(p > 1.0):
            bad = int(np.argwhere((p < 0.0) | (p > 1.0))[0][0])
            raise InvariantViolation(
                f"transition matrix row {bad} has entries outside [0, 1]"
            )
        sums = p.sum(axis=1)
        off = np.abs(sums - 1.0)
        if np.any(off > ROW_SUM_TOL):
            bad = int(np.argmax(off))
            raise InvariantViolation(
                f"transition matrix row {bad} sums to {sums[bad]:.12f}, "
                f"expected 1 within {ROW_SUM_TOL}"
            )
        object.__setattr__(self, "p", _freeze(p))

    @property
    def n(self) -> int:
        return self.p.shape[0]


@dataclass(frozen=True)
class AbsorbingDecomposition:
    """Transient block ``q`` and per-row absorbing mass ``r``.

    ``q`` is strictly upper triangular (zero diagonal included) and
    ``q[i].sum() + r[i] == 1`` for every row; ``r[i] >= delta_abs > 0`` so
    absorption is guaranteed from every state.
    """

    q: np.ndarray
    r: np.ndarray
    delta_abs: float

    def __post_init__(self):
        q = _as_square_matrix(self.q, "transient block")
        r = np.array(self.r, dtype=np.float64, copy=True)
        n = q.shape[0]
        if r.shape != (n,):
            raise InvariantViolation(
                f"absorbing vector has shape {r.shape}, expected ({n},)"
            )
        if not 0.0 < self.delta_abs:
            raise InvariantViolation("delta_abs must be positive")
        if np.any(np.tril(q) != 0.0):
            bad = int(np.argwhere(np.tril(q) != 0.0)[0][0])
            raise InvariantViolation(
                f"transient block row {bad} has mass on or below the diagonal"
            )
        if np.any(q < 0.0):
            bad = int(np.argwhere(q < 0.0)[0][0])
            raise InvariantViolation(f"transient block row {bad} has a negative entry")
        if np.any(r < self.delta_abs):
            bad = int(np.argmax(r < self.delta_abs))
            raise InvariantViolation(
                f"row {bad} has absorbing mass {r[bad]:.3e} below "
                f"delta_abs={self.delta_abs:.3e}"
            )
        sums = q.sum(axis=1) + r
        off = np.abs(sums - 1.0)
        if np.any(off > ROW_SUM_TOL):
            bad = int(np.argmax(off))
            raise InvariantViolation(
                f"decomposition row {bad} sums to {sums[bad]:.12f}, "
                f"expected 1 within {ROW_SUM_TOL}"
            )
        object.__setattr__(self, "q", _freeze(q))
        object.__setattr__(self, "r", _freeze(r))

    @property
    def n(self) -> int:
        return self.q.shape[0]


@dataclass(frozen=True)
class FundamentalMatrix:
    """Expected number of visits to each position before absorption.

    Upper triangular with a unit diagonal: a forward-only walk visits any
    position at most once, so entries double as ever-visit probabilities
    once column-normalised.
    """

    n_mat: np.ndarray

    def __post_init__(self):
        m = _as_square_matrix(self.n_mat, "fundamental matrix")
        if np.any(np.tril(m, k=-1) != 0.0):
            raise InvariantViolation("fundamental matrix has mass below the diagonal")
        if np.any(np.diag(m) != 1.0):
            raise InvariantViolation("fundamental matrix diagonal is not exactly 1")
        if np.any(m < 0.0):
            raise InvariantViolation("fundamental matrix has a negative entry")
        object.__setattr__(self, "n_mat", _freeze(m))

    @property
    def n(self) -> int:
        return self.n_mat.shape[0]


@dataclass(frozen=True)
class VisitationMatrix:
    """Probability of ever visiting column j on a walk started at row i."""

    v: np.ndarray

    def __post_init__(self):
        v = _as_square_matrix(self.v, "visitation matrix")
        if np.any(np.tril(v, k=-1) != 0.0):
            raise InvariantViolation("visitation matrix has mass below the diagonal")
        if np.any(np.diag(v) != 1.0):
            raise InvariantViolation("visitation matrix diagonal is not exactly 1")
        if np.any(v < 0.0) or np.any(v > 1.0 + 1e-9):
            raise InvariantViolation("visitation matrix has entries outside [0, 1]")
        object.__setattr__(self, "v", _freeze(v))

    @property
    def n(self) -> int:
        return self.v.shape[0]


@dataclass(frozen=True)
class InfoProfile:
    """Per-token information scores and losses, in nats."""

    scores: np.ndarray
    losses: np.ndarray
    score_cap: float

    def __post_init__(self):
        s = np.array(self.scores, dtype=np.float64, copy=True)
        l = np.array(self.losses, dtype=np.float64, copy=True)
        if s.ndim != 1 or s.shape != l.shape or s.shape[0] < 1:
            raise InvariantViolation(
                f"profile vectors must be equal-length 1-d, got {s.shape} and {l.shape}"
            )
        if self.score_cap <= 0.0:
            raise InvariantViolation("score_cap must be positive")
        if s[0] != 0.0:
            raise InvariantViolation("the first token must have score exactly 0")
        if np.any(s < 0.0) or np.any(s > self.score_cap):
            raise InvariantViolation("scores must lie in [0, score_cap]")
        if np.any(l < 0.0) or np.any(l > s):
            raise InvariantViolation("losses must lie in [0, score]")
        if l[-1] != 0.0:
            raise InvariantViolation("the last token must have loss exactly 0")
        object.__setattr__(self, "scores", _freeze(s))
        object.__setattr__(self, "losses", _freeze(l))

    @property
    def n(self) -> int:
        return self.scores.shape[0]


def decompose(
    p: ContextTransitionMatrix | np.ndarray,
    delta_abs: float = DEFAULT_DELTA_ABS,
) -> AbsorbingDecomposition:
    """Split a transition matrix into its transient block and absorbing mass.

    The diagonal (escape) mass of each row becomes that row's absorbing
    probability; the strict upper triangle is kept as the transient block.
    Rows whose escape mass falls below ``delta_abs`` are clamped: the
    absorbing share is raised to ``delta_abs`` and the deficit is removed
    proportionally from the row's forward jumps, preserving the row sum.

    Parameters
    ----------
    p : ContextTransitionMatrix or array_like
        Row-stochastic forward-jump matrix; raw arrays are validated.
    delta_abs : float
        Minimum absorbing mass per row, in (0, 1e-3].

    Returns
    -------
    AbsorbingDecomposition
    """
    if not 0.0 < delta_abs <= 1e-3:
        raise ConfigurationError(
            f"delta_abs must lie in (0, 1e-3], got {delta_abs!r}"
        )
    if not isinstance(p, ContextTransitionMatrix):
        p = ContextTransitionMatrix(p)
    q = p.p.copy()
    r = np.diag(q).copy()
    np.fill_diagonal(q, 0.0)
    deficient = r < delta_abs
    if np.any(deficient):
        # off-diagonal mass is 1 - r > 1 - 1e-3 > 0 on deficient rows
        scale = (1.0 - delta_abs) / (1.0 - r[deficient])
        q[deficient] *= scale[:, None]
        r[deficient] = delta_abs
    return AbsorbingDecomposition(q=q, r=r, delta_abs=delta_abs)


def fundamental(d: AbsorbingDecomposition) -> FundamentalMatrix:
    """Expected visits before absorption, via triangular back-substitution.

    Solves ``(I - Q) N = I`` column by column with a dense unit-upper
    triangular solve. The system is unit triangular by construction, so no
    pivoting or general-purpose inversion is ever involved and the solution
    carries an exact unit diagonal.
    """
    n = d.n
    ident = np.eye(n)
    # unit_diagonal: only the strict upper triangle of (I - Q) is read
    n_mat = solve_triangular(
        ident - d.q, ident, lower=False, unit_diagonal=True, check_finite=False
    )
    assert np.all(np.isfinite(n_mat)) and np.all(np.diag(n_mat) == 1.0)
    return FundamentalMatrix(n_mat=n_mat)


def visitation(n_mat: FundamentalMatrix) -> VisitationMatrix:
    """Normalise expected visits into ever-visit probabilities.

    Each column is divided by its diagonal entry. With a unit diagonal the
    division is the identity, but it is performed unconditionally so the
    operation stays correct if a self-loop variant is ever enabled.
    """
    diag = np.diag(n_mat.n_mat)
    if np.any(diag == 0.0):
        bad = int(np.argmax(diag == 0.0))
        raise InvariantViolation(f"fundamental matrix has zero diagonal at {bad}")
    v = n_mat.n_mat / diag[None, :]
    return VisitationMatrix(v=v)


def info_scores(v: VisitationMatrix, score_cap: float = DEFAULT_SCORE_CAP) -> np.ndarray:
    """Per-token information score: negative log ever-visit probability.

    ``S(i) = min(-log v[0, i], score_cap)`` with the visitation probability
    floored at ``exp(-score_cap)`` so unreachable tokens score exactly at
    the cap. The first token scores exactly 0.
    """
    if score_cap <= 0.0:
        raise ConfigurationError(f"score_cap must be positive, got {score_cap!r}")
    reach = np.maximum(v.v[0, :], np.exp(-score_cap))
    scores = np.minimum(np.maximum(-np.log(reach), 0.0), score_cap)
    scores[0] = 0.0
    return scores


def info_loss(scores: np.ndarray, v: VisitationMatrix) -> np.ndarray:
    """Share of each token's score that never reaches the last context token.

    ``L(i) = S(i) * (1 - v[i, n-1])``; the last token loses nothing to
    itself because it is always visited from itself.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.shape != (v.n,):
        raise InvariantViolation(
            f"score vector has shape {s.shape}, expected ({v.n},)"
        )
    return np.maximum(s * (1.0 - v.v[:, -1]), 0.0)


def profile_from_visitation(
    v: VisitationMatrix, score_cap: float = DEFAULT_SCORE_CAP
) -> InfoProfile:
    """Convenience composition of :func:`info_scores` and :func:`info_loss`."""
    scores = info_scores(v, score_cap)
    losses = info_loss(scores, v)
    return InfoProfile(scores=scores, losses=losses, score_cap=score_cap)


def mc_visitation_oracle(
    d: AbsorbingDecomposition, walks: int, seed: int
) -> VisitationMatrix:
    """Estimate ever-visit probabilities by simulating random walks.

    For each start state, ``walks`` independent walks follow the categorical
    rows ``[Q | R]`` until absorption and the fraction that ever enters each
    later state is recorded. Because the chain only moves forward, a walk
    enters any state at most once, so walks sitting in the same state can be
    stepped together with one multinomial draw per state without changing
    the distribution of the estimate. Deterministic given the seed.
    """
    if walks < 1:
        raise ConfigurationError(f"walks must be >= 1, got {walks!r}")
    rng = np.random.default_rng(seed)
    n = d.n
    v = np.zeros((n, n))
    for start in range(n):
        entered = np.zeros(n, dtype=np.int64)
        entered[start] = walks
        for s in range(start, n):
            m = int(entered[s])
            if m == 0:
                continue
            pvals = np.append(d.q[s, s + 1 :], d.r[s])
            pvals = pvals / pvals.sum()
            counts = rng.multinomial(m, pvals)
            entered[s + 1 :] += counts[:-1]
        v[start] = entered / walks
        v[start, start] = 1.0
    return VisitationMatrix(v=v)
