"""Build a context transition matrix from per-prefix distributions.

Position i jumps to a later position j with the provider's next-token
probability of the surface token sitting at j, given the prefix x_1..x_i.
Whatever forward mass remains ends up on the diagonal as escape mass. Rows
whose forward jumps would exceed the escape floor are scaled back so every
row keeps at least ``delta_abs`` of absorbing mass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chain import (
    DEFAULT_DELTA_ABS,
    DEFAULT_SCORE_CAP,
    AbsorbingDecomposition,
    ContextTransitionMatrix,
    FundamentalMatrix,
    InfoProfile,
    VisitationMatrix,
    decompose,
    fundamental,
    profile_from_visitation,
    visitation,
)
from .errors import ConfigurationError, InvariantViolation, ProviderError
from .providers import PrefixDistribution, TokenSequence, batch_prefix_distributions

DUPLICATE_POLICIES = ("full-mass", "split-mass")


@dataclass(frozen=True)
class BuildPolicy:
    """Knobs governing the distribution -> matrix conversion.

    ``duplicate_policy`` decides whether each later occurrence of a repeated
    surface token receives the full vocabulary probability or an equal
    split. ``scale_to_fit`` scales overweight rows back into the simplex;
    when disabled an overweight row is an error.
    """

    duplicate_policy: str = "full-mass"
    delta_abs: float = DEFAULT_DELTA_ABS
    scale_to_fit: bool = True

    def __post_init__(self):
        if self.duplicate_policy not in DUPLICATE_POLICIES:
            raise ConfigurationError(
                f"duplicate_policy must be one of {DUPLICATE_POLICIES}, "
                f"got {self.duplicate_policy!r}"
            )
        if not 0.0 < self.delta_abs <= 1e-3:
            raise ConfigurationError(
                f"delta_abs must lie in (0, 1e-3], got {self.delta_abs!r}"
            )


def build_transition_matrix(
    dists: list[PrefixDistribution],
    tokens,
    policy: BuildPolicy = BuildPolicy(),
) -> ContextTransitionMatrix:
    """Assemble the forward-jump matrix for a token context.

    ``dists[i]`` must condition on the prefix of length i+1. The row for
    position i reads the probability of each later token from ``dists[i]``;
    under the split-mass policy that probability is divided equally among
    the later positions sharing the same surface token. The diagonal is the
    recomputed leftover, so rows sum to 1 at machine precision regardless of
    small drift in the provider's masses.
    """
    seq = TokenSequence.coerce(tokens)
    n = len(seq)
    if n < 1:
        raise ConfigurationError("token sequence must be non-empty")
    if len(dists) != n:
        raise InvariantViolation(
            f"got {len(dists)} distributions for {n} tokens"
        )
    for i, dist in enumerate(dists):
        if dist.prefix_len != i + 1:
            raise InvariantViolation(
                f"distribution {i} conditions on prefix length {dist.prefix_len}, "
                f"expected {i + 1}"
            )

    p = np.zeros((n, n))
    # occurrences of each surface token among positions > i, updated per row
    later_counts: dict[str, int] = {}
    rows = []
    for i in range(n - 1, -1, -1):
        row = np.zeros(n)
        dist = dists[i]
        for j in range(i + 1, n):
            tok = seq[j]
            prob = dist.prob_of(tok)
            if prob == 0.0 and dist.is_dense and tok not in dist.probs:
                raise ProviderError(
                    f"token {tok!r} at position {j + 1} is missing from the dense "
                    f"distribution after prefix length {i + 1} "
                    "(vocabulary inconsistency)"
                )
            if policy.duplicate_policy == "split-mass":
                prob /= later_counts[tok]
            row[j] = prob
        rows.append(row)
        later_counts[seq[i]] = later_counts.get(seq[i], 0) + 1
    rows.reverse()

    for i, row in enumerate(rows):
        forward = row.sum()
        if forward > 1.0 - policy.delta_abs:
            if not policy.scale_to_fit:
                raise InvariantViolation(
                    f"row {i} forward mass {forward:.6f} exceeds "
                    f"1 - delta_abs with scale_to_fit disabled"
                )
            row *= (1.0 - policy.delta_abs) / forward
            forward = row.sum()
        row[i] = 1.0 - forward
        p[i] = row
    return ContextTransitionMatrix(p=p)


@dataclass(frozen=True)
class ContextAnalysis:
    """Everything derived from one context, kept for inspection."""

    tokens: TokenSequence
    distributions: list[PrefixDistribution]
    transition: ContextTransitionMatrix
    decomposition: AbsorbingDecomposition
    fundamental: FundamentalMatrix
    visitation: VisitationMatrix
    profile: InfoProfile


def analyze_context(
    provider,
    tokens,
    policy: BuildPolicy = BuildPolicy(),
    score_cap: float = DEFAULT_SCORE_CAP,
) -> ContextAnalysis:
    """Run the full analysis chain over a context.

    Fetches one distribution per prefix, builds the transition matrix,
    decomposes it, solves for expected visits, normalises to ever-visit
    probabilities and derives the information profile.
    """
    seq = TokenSequence.coerce(tokens)
    if len(seq) < 1:
        raise ConfigurationError("context must contain at least one token")
    dists = batch_prefix_distributions(provider, seq)
    transition = build_transition_matrix(dists, seq, policy)
    decomposition = decompose(transition, policy.delta_abs)
    n_mat = fundamental(decomposition)
    v = visitation(n_mat)
    profile = profile_from_visitation(v, score_cap)
    return ContextAnalysis(
        tokens=seq,
        distributions=dists,
        transition=transition,
        decomposition=decomposition,
        fundamental=n_mat,
        visitation=v,
        profile=profile,
    )
