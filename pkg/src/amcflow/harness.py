"""Dataset I/O, multiple-choice evaluation, masking experiment, inspection.

Datasets are JSONL, one multiple-choice item per line. Reports are JSON
documents embedding their full configuration, so a report can be reproduced
bit-identically from its own config digest (deterministic providers only).
CSV outputs use RFC-4180 quoting via the stdlib writer.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .chain import DEFAULT_SCORE_CAP
from .decoding import DEFAULT_LAMBDA, MODE_AMC, MODES, score_continuation
from .errors import ConfigurationError, DatasetError, ProviderError
from .providers import (
    MASK_TOKEN,
    HttpProvider,
    ProviderDescriptor,
    SerializingProvider,
    TokenSequence,
    tokenize,
)
from .transition import BuildPolicy, analyze_context

log = logging.getLogger(__name__)

MASK_POLICIES = ("info-score", "random")


@dataclass(frozen=True)
class McItem:
    """One multiple-choice question."""

    id: str
    question: str
    choices: tuple[str, ...]
    correct_index: int

    def __post_init__(self):
        if len(self.choices) < 2:
            raise DatasetError(f"item {self.id!r} needs at least 2 choices")
        if not 0 <= self.correct_index < len(self.choices):
            raise DatasetError(
                f"item {self.id!r} has correct_index {self.correct_index} "
                f"out of range for {len(self.choices)} choices"
            )
        if not tokenize(self.question):
            raise DatasetError(f"item {self.id!r} has an empty question")
        if any(not tokenize(c) for c in self.choices):
            raise DatasetError(f"item {self.id!r} has an empty choice")

    @property
    def question_tokens(self) -> TokenSequence:
        return TokenSequence.from_text(self.question)


def load_dataset(path) -> list[McItem]:
    """Parse a JSONL dataset, reporting the line number of any bad record."""
    items = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                item = McItem(
                    id=str(obj["id"]),
                    question=str(obj["question"]),
                    choices=tuple(str(c) for c in obj["choices"]),
                    correct_index=int(obj["correct_index"]),
                )
            except DatasetError as exc:
                raise DatasetError(f"line {lineno}: {exc}") from exc
            except (KeyError, TypeError, ValueError) as exc:
                raise DatasetError(f"line {lineno}: malformed record: {exc}") from exc
            items.append(item)
    if not items:
        raise DatasetError(f"dataset {path} contains no items")
    return items


@dataclass(frozen=True)
class ItemResult:
    id: str
    chosen_index: int | None
    scores: tuple[float, ...] | None
    correct: bool | None
    error: str | None = None

    def to_json_dict(self) -> dict:
        return {
            "id": self.id,
            "chosen_index": self.chosen_index,
            "scores": list(self.scores) if self.scores is not None else None,
            "correct": self.correct,
            "error": self.error,
        }


@dataclass(frozen=True)
class EvalReport:
    """Accuracy plus per-item detail and the config that produced it."""

    accuracy: float
    evaluated: int
    failed: int
    per_item: tuple[ItemResult, ...]
    config: dict

    def to_json_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "evaluated": self.evaluated,
            "failed": self.failed,
            "per_item": [r.to_json_dict() for r in self.per_item],
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, indent=2)


def prepare_provider(descriptor: ProviderDescriptor):
    """Build a provider, serialising kinds not known to be concurrency-safe."""
    provider = descriptor.build()
    if isinstance(provider, HttpProvider):
        return SerializingProvider(provider)
    return provider


def _score_item(
    item: McItem, provider, lam, mode, policy, score_cap, length_normalize,
    include_empty_prefix,
):
    question = item.question_tokens
    scores = []
    for choice in item.choices:
        result = score_continuation(
            provider,
            question,
            TokenSequence.from_text(choice),
            lam=lam,
            mode=mode,
            policy=policy,
            score_cap=score_cap,
            include_empty_prefix=include_empty_prefix,
        )
        scores.append(result.mean if length_normalize else result.total)
    chosen = int(np.argmax(scores))
    return ItemResult(
        id=item.id,
        chosen_index=chosen,
        scores=tuple(scores),
        correct=chosen == item.correct_index,
    )


def evaluate_items(
    items: list[McItem],
    provider,
    lam: float = DEFAULT_LAMBDA,
    mode: str = MODE_AMC,
    policy: BuildPolicy = BuildPolicy(),
    score_cap: float = DEFAULT_SCORE_CAP,
    length_normalize: bool = True,
    jobs: int = 1,
) -> tuple[float, int, int, tuple[ItemResult, ...]]:
    """Score every item; failures are excluded from accuracy but counted."""
    if mode not in MODES:
        raise ConfigurationError(f"mode must be one of {MODES}, got {mode!r}")
    if jobs < 1:
        raise ConfigurationError(f"jobs must be >= 1, got {jobs!r}")

    def run_one(item: McItem) -> ItemResult:
        try:
            return _score_item(
                item, provider, lam, mode, policy, score_cap, length_normalize
            )
        except ProviderError as exc:
            return ItemResult(
                id=item.id, chosen_index=None, scores=None, correct=None,
                error=str(exc),
            )

    if jobs == 1:
        results = [run_one(item) for item in items]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run_one, items))
    results.sort(key=lambda r: r.id)
    evaluated = [r for r in results if r.error is None]
    failed = len(results) - len(evaluated)
    correct = sum(1 for r in evaluated if r.correct)
    accuracy = correct / len(evaluated) if evaluated else 0.0
    return accuracy, len(evaluated), failed, tuple(results)


def eval_mc(
    dataset_path,
    descriptor: ProviderDescriptor,
    lam: float = DEFAULT_LAMBDA,
    mode: str = MODE_AMC,
    policy: BuildPolicy = BuildPolicy(),
    score_cap: float = DEFAULT_SCORE_CAP,
    length_normalize: bool = True,
    jobs: int = 1,
    seed: int = 0,
) -> EvalReport:
    """Multiple-choice accuracy of the (possibly adjusted) scorer."""
    items = load_dataset(dataset_path)
    provider = prepare_provider(descriptor)
    accuracy, evaluated, failed, results = evaluate_items(
        items, provider, lam, mode, policy, score_cap, length_normalize, jobs
    )
    config = {
        "dataset": str(dataset_path),
        "provider": descriptor.to_config(),
        "lambda": lam,
        "mode": mode,
        "duplicate_policy": policy.duplicate_policy,
        "delta_abs": policy.delta_abs,
        "score_cap": score_cap,
        "length_normalize": length_normalize,
        "jobs": jobs,
        "seed": seed,
    }
    return EvalReport(
        accuracy=accuracy,
        evaluated=evaluated,
        failed=failed,
        per_item=results,
        config=config,
    )


@dataclass(frozen=True)
class MaskSpec:
    """Which masking runs to perform."""

    k_values: tuple[int, ...]
    policy: str
    seeds: tuple[int, ...] = ()
    mask_token: str = MASK_TOKEN

    def __post_init__(self):
        if any(k < 0 for k in self.k_values):
            raise ConfigurationError("k_values must be non-negative")
        if tuple(sorted(self.k_values)) != tuple(self.k_values):
            raise ConfigurationError("k_values must be sorted ascending")
        if self.policy not in MASK_POLICIES:
            raise ConfigurationError(
                f"policy must be one of {MASK_POLICIES}, got {self.policy!r}"
            )
        if self.policy == "random" and not self.seeds:
            raise ConfigurationError("random masking requires at least one seed")


@dataclass(frozen=True)
class MaskRow:
    policy: str
    k: int
    seed: int | None
    accuracy: float
    skipped: int


@dataclass(frozen=True)
class MaskTable:
    """Accuracy per (policy, k, seed) masking run."""

    rows: tuple[MaskRow, ...]

    def mean_accuracy(self, policy: str, k: int) -> float:
        accs = [r.accuracy for r in self.rows if r.policy == policy and r.k == k]
        if not accs:
            raise KeyError(f"no rows for policy={policy!r} k={k}")
        return float(np.mean(accs))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["policy", "k", "seed", "accuracy"])
        for row in self.rows:
            writer.writerow(
                [row.policy, row.k, "" if row.seed is None else row.seed, row.accuracy]
            )
        return buf.getvalue()


def _item_rng(seed: int, item_id: str) -> np.random.Generator:
    # per-item stream keyed on the id so masks survive dataset reordering
    return np.random.default_rng([seed, zlib.crc32(item_id.encode("utf-8"))])


def _masked_item(item: McItem, positions, mask_token: str) -> McItem:
    tokens = list(item.question_tokens)
    for pos in positions:
        tokens[pos] = mask_token
    return replace(item, question=" ".join(tokens))


def _info_rank(item: McItem, provider, policy, score_cap) -> np.ndarray:
    profile = analyze_context(provider, item.question_tokens, policy, score_cap).profile
    # stable sort: ties resolved by earlier position
    return np.argsort(-profile.scores, kind="stable")


def mask_experiment(
    dataset_path,
    descriptor: ProviderDescriptor,
    spec: MaskSpec,
    lam: float = DEFAULT_LAMBDA,
    mode: str = MODE_AMC,
    policy: BuildPolicy = BuildPolicy(),
    score_cap: float = DEFAULT_SCORE_CAP,
    length_normalize: bool = True,
    jobs: int = 1,
) -> MaskTable:
    """Accuracy after masking the top-k scored (or k random) question tokens.

    Info-score masking replaces the k highest-scoring question tokens with
    the mask token; random masking replaces k uniformly drawn positions,
    once per seed. Items shorter than k are skipped and counted. Each
    masked dataset is re-evaluated like ``eval_mc``.
    """
    items = load_dataset(dataset_path) if not isinstance(dataset_path, list) else dataset_path
    provider = prepare_provider(descriptor)
    rankings = None
    if spec.policy == "info-score":
        rankings = {
            item.id: _info_rank(item, provider, policy, score_cap) for item in items
        }

    rows = []
    seeds: tuple[int | None, ...] = spec.seeds if spec.policy == "random" else (None,)
    for k in spec.k_values:
        for seed in seeds:
            masked = []
            skipped = 0
            for item in items:
                n_tokens = len(item.question_tokens)
                if k > n_tokens:
                    skipped += 1
                    continue
                if spec.policy == "info-score":
                    positions = rankings[item.id][:k]
                else:
                    positions = _item_rng(seed, item.id).choice(
                        n_tokens, size=k, replace=False
                    )
                masked.append(_masked_item(item, positions, spec.mask_token))
            if skipped:
                log.warning(
                    "mask run policy=%s k=%d seed=%s skipped %d short items",
                    spec.policy, k, seed, skipped,
                )
            accuracy, _, _, _ = evaluate_items(
                masked, provider, lam, mode, policy, score_cap, length_normalize, jobs
            )
            rows.append(
                MaskRow(policy=spec.policy, k=k, seed=seed, accuracy=accuracy,
                        skipped=skipped)
            )
    return MaskTable(rows=tuple(rows))


def inspect_context(
    prompt_tokens,
    provider,
    policy: BuildPolicy = BuildPolicy(),
    score_cap: float = DEFAULT_SCORE_CAP,
    include_transitions: bool = False,
    top_k: int = 5,
) -> dict:
    """Analysis payload for a prompt: scores, losses, matrices, candidates."""
    seq = TokenSequence.coerce(prompt_tokens)
    analysis = analyze_context(provider, seq, policy, score_cap)
    candidates = []
    for dist in analysis.distributions:
        ranked = sorted(dist.probs.items(), key=lambda kv: (-kv[1], kv[0]))[:top_k]
        candidates.append([{"token": t, "prob": p} for t, p in ranked])
    payload = {
        "tokens": list(seq),
        "scores": analysis.profile.scores.tolist(),
        "losses": analysis.profile.losses.tolist(),
        "visitation": analysis.visitation.v.tolist(),
        "candidates": candidates,
    }
    if include_transitions:
        payload["transition"] = analysis.transition.p.tolist()
    return payload


def inspect_to_json(payload: dict) -> str:
    return json.dumps(payload, indent=2)


def inspect_to_csv(payload: dict) -> str:
    """Long-format CSV carrying the same numbers as the JSON payload."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["field", "i", "j", "token", "value"])
    for i, tok in enumerate(payload["tokens"]):
        writer.writerow(["token", i, "", tok, ""])
    for i, s in enumerate(payload["scores"]):
        writer.writerow(["score", i, "", "", s])
    for i, l in enumerate(payload["losses"]):
        writer.writerow(["loss", i, "", "", l])
    for i, row in enumerate(payload["visitation"]):
        for j, v in enumerate(row):
            writer.writerow(["visitation", i, j, "", v])
    if "transition" in payload:
        for i, row in enumerate(payload["transition"]):
            for j, p in enumerate(row):
                writer.writerow(["transition", i, j, "", p])
    for i, ranked in enumerate(payload["candidates"]):
        for rank, entry in enumerate(ranked):
            writer.writerow(["candidate", i, rank, entry["token"], entry["prob"]])
    return buf.getvalue()
