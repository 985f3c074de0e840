"""Loss-weighted next-token adjustment, greedy generation and scoring.

The next-token distribution for the current position is blended with the
per-prefix distributions of the context, each weighted by the share of the
total information loss its prefix token carries. The blend is divided by
(1 + lambda) so the result is again a probability distribution. With
lambda = 0, or when every loss is zero, the original distribution is
returned untouched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .chain import DEFAULT_SCORE_CAP, InfoProfile
from .errors import ConfigurationError, GenerationAborted, InvariantViolation, ProviderError
from .providers import EOS_TOKEN, PrefixDistribution, TokenSequence, Vocabulary
from .transition import BuildPolicy, analyze_context

ADJUSTED_MASS_TOL = 1e-9
LAMBDA_GRID = (0.0, 0.05, 0.1, 0.2, 0.5)
DEFAULT_LAMBDA = 0.1

MODE_BASELINE = "baseline"
MODE_AMC = "amc"
MODES = (MODE_BASELINE, MODE_AMC)


@dataclass(frozen=True)
class AdjustedDistribution:
    """A next-token distribution after the loss-weighted correction."""

    probs: dict[str, float]
    tail_mass: float
    lam: float
    weights: np.ndarray

    def __post_init__(self):
        total = sum(self.probs.values()) + self.tail_mass
        if abs(total - 1.0) > ADJUSTED_MASS_TOL:
            raise InvariantViolation(
                f"adjusted distribution mass is {total:.12f}, "
                f"expected 1 within {ADJUSTED_MASS_TOL}"
            )
        if any(p < 0.0 for p in self.probs.values()) or self.tail_mass < 0.0:
            raise InvariantViolation("adjusted distribution has a negative entry")

    def prob_of(self, token: str) -> float:
        return self.probs.get(token, 0.0)


def adjusted_distribution(
    d_list: list[PrefixDistribution],
    d_t: PrefixDistribution,
    losses,
    lam: float,
) -> AdjustedDistribution:
    """Blend the current distribution with loss-weighted prefix distributions.

    Weights are the losses normalised to sum to 1 (all zero when every loss
    is zero). The blend ``d_t + lam * sum_i w_i * d_list[i]`` is divided by
    ``1 + lam`` whenever any weight is positive; with ``lam == 0`` or no
    positive weight, ``d_t`` is returned unchanged.
    """
    losses = np.asarray(losses, dtype=np.float64)
    if losses.ndim != 1 or len(d_list) != losses.shape[0]:
        raise InvariantViolation(
            f"got {len(d_list)} prefix distributions for {losses.shape} losses"
        )
    if lam < 0.0:
        raise ConfigurationError(f"lambda must be >= 0, got {lam!r}")
    total_loss = float(losses.sum())
    if total_loss > 0.0:
        weights = losses / total_loss
    else:
        weights = np.zeros_like(losses)
    if lam == 0.0 or total_loss == 0.0:
        return AdjustedDistribution(
            probs=dict(d_t.probs),
            tail_mass=d_t.tail_mass,
            lam=lam,
            weights=weights,
        )
    blended = dict(d_t.probs)
    tail = d_t.tail_mass
    for w, dist in zip(weights, d_list):
        if w == 0.0:
            continue
        scale = lam * w
        for tok, p in dist.probs.items():
            blended[tok] = blended.get(tok, 0.0) + scale * p
        tail += scale * dist.tail_mass
    denom = 1.0 + lam
    probs = {tok: p / denom for tok, p in blended.items()}
    return AdjustedDistribution(
        probs=probs, tail_mass=tail / denom, lam=lam, weights=weights
    )


def argmax_token(probs: dict[str, float], vocabulary: Vocabulary | None = None) -> str:
    """Highest-probability token; ties go to the lowest token id.

    Without a vocabulary, lexicographic order stands in for token ids.
    """
    if not probs:
        raise InvariantViolation("cannot take the argmax of an empty distribution")
    if vocabulary is not None:
        return min(probs, key=lambda t: (-probs[t], vocabulary.id_of(t)))
    return min(probs, key=lambda t: (-probs[t], t))


@dataclass(frozen=True)
class DistributionDigest:
    """Top entries plus entropy, for traces."""

    top: tuple[tuple[str, float], ...]
    entropy: float

    @classmethod
    def from_probs(
        cls, probs: dict[str, float], tail_mass: float = 0.0, k: int = 5
    ) -> "DistributionDigest":
        ranked = sorted(probs.items(), key=lambda kv: (-kv[1], kv[0]))[:k]
        ent = -sum(p * math.log(p) for _, p in probs.items() if p > 0.0)
        if tail_mass > 0.0:
            ent -= tail_mass * math.log(tail_mass)
        return cls(top=tuple(ranked), entropy=ent)

    def to_json_dict(self) -> dict:
        return {"top": [[t, p] for t, p in self.top], "entropy": self.entropy}


@dataclass(frozen=True)
class GenerationStep:
    chosen: str
    baseline: DistributionDigest
    adjusted: DistributionDigest
    profile: InfoProfile | None

    def to_json_dict(self) -> dict:
        profile = None
        if self.profile is not None:
            profile = {
                "scores": self.profile.scores.tolist(),
                "losses": self.profile.losses.tolist(),
                "score_cap": self.profile.score_cap,
            }
        return {
            "chosen": self.chosen,
            "baseline": self.baseline.to_json_dict(),
            "adjusted": self.adjusted.to_json_dict(),
            "profile": profile,
        }


@dataclass
class GenerationTrace:
    """One step per emitted token, plus why generation stopped."""

    mode: str
    lam: float
    prompt: TokenSequence
    steps: list[GenerationStep]
    stop_reason: str = ""

    @property
    def generated_tokens(self) -> tuple[str, ...]:
        return tuple(step.chosen for step in self.steps)

    @property
    def text(self) -> str:
        return " ".join(self.generated_tokens)

    def to_json_dict(self) -> dict:
        return {
            "mode": self.mode,
            "lambda": self.lam,
            "prompt": list(self.prompt),
            "steps": [s.to_json_dict() for s in self.steps],
            "stop_reason": self.stop_reason,
        }


def _split_for_adjustment(analysis, include_empty_prefix: bool, provider):
    """Prefix distributions and losses feeding the adjustment at this step.

    The loss-weighted terms run over prefixes 1..n-1; the distribution
    conditioned on the full context is the term being corrected. The empty
    prefix, when requested and available, joins with loss 0: it has no
    chain state, so it can never carry loss weight, and the flag exists
    only to keep the interface uniform across providers.
    """
    dists = analysis.distributions
    losses = analysis.profile.losses
    d_list = list(dists[:-1])
    loss_list = list(losses[:-1])
    if include_empty_prefix and provider.supports_empty_prefix():
        d_list.insert(0, provider.next_distribution(()))
        loss_list.insert(0, 0.0)
    return d_list, np.asarray(loss_list), dists[-1]


def generate(
    provider,
    prompt,
    lam: float = DEFAULT_LAMBDA,
    max_tokens: int = 16,
    mode: str = MODE_AMC,
    policy: BuildPolicy = BuildPolicy(),
    score_cap: float = DEFAULT_SCORE_CAP,
    include_empty_prefix: bool = False,
) -> GenerationTrace:
    """Greedy generation, optionally under the loss-weighted adjustment.

    Baseline mode takes the provider's argmax directly and skips chain
    construction entirely. Generation stops at ``max_tokens`` or when the
    end-of-sequence token wins the argmax (which is not emitted and does
    not produce a step).
    """
    seq = TokenSequence.coerce(prompt)
    if len(seq) < 1:
        raise ConfigurationError("prompt must contain at least one token")
    if max_tokens < 1:
        raise ConfigurationError(f"max_tokens must be >= 1, got {max_tokens!r}")
    if mode not in MODES:
        raise ConfigurationError(f"mode must be one of {MODES}, got {mode!r}")

    trace = GenerationTrace(mode=mode, lam=lam, prompt=seq, steps=[])
    vocab = getattr(provider, "vocabulary", None)
    ctx = seq
    for _ in range(max_tokens):
        try:
            if mode == MODE_BASELINE:
                d_t = provider.next_distribution(ctx)
                probs = dict(d_t.probs)
                baseline_digest = DistributionDigest.from_probs(probs, d_t.tail_mass)
                adjusted_digest = baseline_digest
                profile = None
            else:
                analysis = analyze_context(provider, ctx, policy, score_cap)
                d_list, loss_list, d_t = _split_for_adjustment(
                    analysis, include_empty_prefix, provider
                )
                adj = adjusted_distribution(d_list, d_t, loss_list, lam)
                probs = adj.probs
                baseline_digest = DistributionDigest.from_probs(
                    dict(d_t.probs), d_t.tail_mass
                )
                adjusted_digest = DistributionDigest.from_probs(probs, adj.tail_mass)
                profile = analysis.profile
        except ProviderError as exc:
            trace.stop_reason = "provider-error"
            raise GenerationAborted(str(exc), partial_trace=trace) from exc
        chosen = argmax_token(probs, vocab)
        if chosen == EOS_TOKEN:
            trace.stop_reason = "eos"
            return trace
        trace.steps.append(
            GenerationStep(
                chosen=chosen,
                baseline=baseline_digest,
                adjusted=adjusted_digest,
                profile=profile,
            )
        )
        ctx = ctx.extended(chosen)
    trace.stop_reason = "max_tokens"
    return trace


@dataclass(frozen=True)
class ContinuationScore:
    """Log-probability of a continuation under the adjusted distributions."""

    total: float
    per_token: tuple[float, ...]
    floored_tokens: int

    @property
    def mean(self) -> float:
        return self.total / len(self.per_token)


def score_continuation(
    provider,
    prompt,
    continuation,
    lam: float = DEFAULT_LAMBDA,
    mode: str = MODE_AMC,
    policy: BuildPolicy = BuildPolicy(),
    score_cap: float = DEFAULT_SCORE_CAP,
    include_empty_prefix: bool = False,
) -> ContinuationScore:
    """Sum of log adjusted probabilities over the continuation tokens.

    The context grows by one observed token per position and the adjusted
    distribution is recomputed each time. A token with exactly zero
    adjusted probability scores ``-score_cap`` and is counted in
    ``floored_tokens``. With lambda 0 (or baseline mode) this is the
    provider's ordinary log-likelihood.
    """
    prompt_seq = TokenSequence.coerce(prompt)
    cont_seq = TokenSequence.coerce(continuation)
    if len(prompt_seq) < 1 or len(cont_seq) < 1:
        raise ConfigurationError("prompt and continuation must be non-empty")
    if mode not in MODES:
        raise ConfigurationError(f"mode must be one of {MODES}, got {mode!r}")

    ctx = prompt_seq
    per_token = []
    floored = 0
    for tok in cont_seq:
        if mode == MODE_BASELINE:
            p = provider.next_distribution(ctx).prob_of(tok)
        else:
            analysis = analyze_context(provider, ctx, policy, score_cap)
            d_list, loss_list, d_t = _split_for_adjustment(
                analysis, include_empty_prefix, provider
            )
            p = adjusted_distribution(d_list, d_t, loss_list, lam).prob_of(tok)
        if p > 0.0:
            per_token.append(math.log(p))
        else:
            per_token.append(-score_cap)
            floored += 1
        ctx = ctx.extended(tok)
    return ContinuationScore(
        total=float(sum(per_token)), per_token=tuple(per_token), floored_tokens=floored
    )
