"""Sources of next-token probability distributions per prefix.

Three interchangeable providers share the same surface:

* :class:`NgramProvider` -- a deterministic additive-smoothed n-gram model
  trained on a whitespace-tokenised corpus, for desk-scale experiments.
* :class:`TableProvider` -- literal prefix -> distribution lookups, for
  tests and fixtures.
* :class:`HttpProvider` -- a client for an external logits server speaking
  the ``POST {endpoint}/prefix_distributions`` contract.

Distributions are sparse: an explicit token -> probability mapping plus a
tail mass covering everything unlisted. The n-gram provider is dense over
its vocabulary (tail 0); the HTTP provider returns top-k lists with a tail.
"""

from __future__ import annotations

import json
import threading
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import requests

from .errors import ConfigurationError, ProviderError

MASK_TOKEN = "[MASK]"
EOS_TOKEN = "</s>"
RESERVED_TOKENS = (MASK_TOKEN, EOS_TOKEN)

MASS_TOL = 1e-6
HTTP_MASS_TOL = 1e-4

_RESERVED_BY_CASEFOLD = {t.casefold(): t for t in RESERVED_TOKENS}


def canonical_token(raw: str) -> str:
    """Lowercase a surface form, preserving reserved tokens verbatim."""
    folded = raw.casefold()
    return _RESERVED_BY_CASEFOLD.get(folded, folded)


def tokenize(text: str) -> tuple[str, ...]:
    """Whitespace tokenisation with lowercasing."""
    return tuple(canonical_token(t) for t in text.split())


@dataclass(frozen=True)
class TokenSequence:
    """A context x_1..x_n of surface tokens."""

    tokens: tuple[str, ...]

    @classmethod
    def from_text(cls, text: str) -> "TokenSequence":
        return cls(tokenize(text))

    @classmethod
    def coerce(cls, value) -> "TokenSequence":
        if isinstance(value, TokenSequence):
            return value
        return cls(tuple(value))

    @property
    def text(self) -> str:
        return " ".join(self.tokens)

    def extended(self, token: str) -> "TokenSequence":
        return TokenSequence(self.tokens + (token,))

    def ids_in(self, vocabulary: "Vocabulary") -> tuple[int, ...]:
        return tuple(vocabulary.id_of(t) for t in self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)

    def __getitem__(self, idx):
        out = self.tokens[idx]
        return TokenSequence(out) if isinstance(idx, slice) else out


@dataclass(frozen=True)
class Vocabulary:
    """Bijective token <-> id mapping, ids assigned in sorted token order."""

    id_to_token: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.id_to_token)) != len(self.id_to_token):
            raise ConfigurationError("vocabulary contains duplicate tokens")
        if len(self.id_to_token) < 2:
            raise ConfigurationError("vocabulary must contain at least 2 tokens")
        missing = [t for t in RESERVED_TOKENS if t not in self.id_to_token]
        if missing:
            raise ConfigurationError(f"vocabulary is missing reserved tokens {missing}")

    @classmethod
    def from_tokens(cls, tokens: Iterable[str]) -> "Vocabulary":
        return cls(tuple(sorted(set(tokens) | set(RESERVED_TOKENS))))

    @cached_property
    def token_to_id(self) -> dict[str, int]:
        return {t: i for i, t in enumerate(self.id_to_token)}

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def id_of(self, token: str) -> int:
        try:
            return self.token_to_id[token]
        except KeyError:
            raise ProviderError(f"token {token!r} is not in the vocabulary") from None


@dataclass(frozen=True)
class PrefixDistribution:
    """Next-token probabilities conditioned on a prefix of length ``prefix_len``.

    ``probs`` lists explicit tokens; ``tail_mass`` is the total probability
    of everything unlisted. Explicit mass plus tail must be 1 within 1e-6.
    """

    probs: Mapping[str, float]
    prefix_len: int
    tail_mass: float = 0.0

    def __post_init__(self):
        if self.tail_mass < 0.0 or any(p < 0.0 for p in self.probs.values()):
            raise ProviderError("distribution has a negative probability")
        total = sum(self.probs.values()) + self.tail_mass
        if abs(total - 1.0) > MASS_TOL:
            raise ProviderError(
                f"distribution mass is {total:.8f}, expected 1 within {MASS_TOL}"
            )

    @property
    def is_dense(self) -> bool:
        return self.tail_mass == 0.0

    def prob_of(self, token: str) -> float:
        return self.probs.get(token, 0.0)


def _validated_prefix(prefix) -> tuple[str, ...]:
    tokens = tuple(TokenSequence.coerce(prefix))
    return tokens


def _check_in_vocabulary(tokens: Sequence[str], vocabulary: Vocabulary) -> None:
    for pos, tok in enumerate(tokens, start=1):
        if tok not in vocabulary:
            raise ProviderError(
                f"token {tok!r} at position {pos} is not in the vocabulary"
            )


def _batch_by_loop(provider, tokens: Sequence[str]) -> list[PrefixDistribution]:
    out = []
    for i in range(1, len(tokens) + 1):
        try:
            out.append(provider.next_distribution(tokens[:i]))
        except ProviderError as exc:
            raise type(exc)(f"prefix of length {i}: {exc}") from exc
    return out


class NgramProvider:
    """Additive-smoothed n-gram model over a whitespace-tokenised corpus.

    Counts are kept for every context length up to ``order - 1``, so any
    prefix (including the empty one) yields a dense distribution over the
    vocabulary. Unseen contexts fall back to the uniform smoothing mass.
    Identical corpus, order and alpha give bit-identical distributions.
    """

    deterministic = True

    def __init__(self, order, alpha, counts, totals, vocabulary):
        self.order = order
        self.alpha = alpha
        self._counts = counts
        self._totals = totals
        self.vocabulary = vocabulary
        self._cache: dict[tuple[str, ...], dict[str, float]] = {}

    def supports_empty_prefix(self) -> bool:
        return True

    def _row(self, ctx: tuple[str, ...]) -> dict[str, float]:
        cached = self._cache.get(ctx)
        if cached is not None:
            return cached
        seen = self._counts.get(ctx, {})
        denom = self._totals.get(ctx, 0) + self.alpha * self.vocabulary.size
        row = {
            tok: (seen.get(tok, 0) + self.alpha) / denom
            for tok in self.vocabulary.id_to_token
        }
        self._cache[ctx] = row
        return row

    def next_distribution(self, prefix) -> PrefixDistribution:
        tokens = _validated_prefix(prefix)
        _check_in_vocabulary(tokens, self.vocabulary)
        ctx_len = min(len(tokens), self.order - 1)
        ctx = tokens[len(tokens) - ctx_len :]
        return PrefixDistribution(
            probs=self._row(ctx), prefix_len=len(tokens), tail_mass=0.0
        )

    def batch_prefix_distributions(self, tokens) -> list[PrefixDistribution]:
        seq = _validated_prefix(tokens)
        if not seq:
            raise ConfigurationError("token sequence must be non-empty")
        return _batch_by_loop(self, seq)

    def to_json_dict(self) -> dict:
        rows = [
            {"context": list(ctx), "counts": dict(sorted(seen.items()))}
            for ctx, seen in sorted(self._counts.items())
        ]
        return {
            "order": self.order,
            "alpha": self.alpha,
            "vocabulary": list(self.vocabulary.id_to_token),
            "contexts": rows,
        }


def train_ngram(corpus: str, order: int, alpha: float) -> NgramProvider:
    """Train an additive-smoothed n-gram provider on raw corpus text.

    Each line is one sentence; an end-of-sequence token is appended so the
    model learns to terminate. The mask token is injected into the
    vocabulary as an ordinary never-seen (smoothing-only) token.
    """
    if not 1 <= order <= 5:
        raise ConfigurationError(f"order must be in [1, 5], got {order!r}")
    if alpha <= 0.0:
        raise ConfigurationError(f"alpha must be positive, got {alpha!r}")
    lines = [tokenize(line) for line in corpus.splitlines()]
    lines = [list(ts) + [EOS_TOKEN] for ts in lines if ts]
    if not lines:
        raise ConfigurationError("corpus is empty after whitespace tokenization")

    counts: dict[tuple[str, ...], dict[str, int]] = {}
    totals: dict[tuple[str, ...], int] = {}
    for ts in lines:
        for pos, tok in enumerate(ts):
            for m in range(min(order - 1, pos) + 1):
                ctx = tuple(ts[pos - m : pos])
                row = counts.setdefault(ctx, {})
                row[tok] = row.get(tok, 0) + 1
                totals[ctx] = totals.get(ctx, 0) + 1
    vocabulary = Vocabulary.from_tokens(t for ts in lines for t in ts)
    return NgramProvider(order, alpha, counts, totals, vocabulary)


class TableProvider:
    """Literal prefix -> distribution lookups, with an optional default row."""

    deterministic = True

    def __init__(self, rows, default=None, vocabulary=None):
        self._rows = {tuple(prefix): dist for prefix, dist in rows.items()}
        self._default = default
        if vocabulary is None:
            tokens = set()
            for prefix, dist in self._rows.items():
                tokens.update(prefix)
                tokens.update(dist.probs)
            if default is not None:
                tokens.update(default.probs)
            vocabulary = Vocabulary.from_tokens(tokens)
        self.vocabulary = vocabulary

    def supports_empty_prefix(self) -> bool:
        return () in self._rows

    @classmethod
    def from_json_dict(cls, obj: dict) -> "TableProvider":
        rows = {}
        for row in obj.get("rows", []):
            prefix = tuple(row["prefix"])
            rows[prefix] = PrefixDistribution(
                probs=dict(row["probs"]),
                prefix_len=len(prefix),
                tail_mass=float(row.get("tail", 0.0)),
            )
        default = None
        if "default" in obj:
            default = PrefixDistribution(
                probs=dict(obj["default"]["probs"]),
                prefix_len=0,
                tail_mass=float(obj["default"].get("tail", 0.0)),
            )
        return cls(rows, default=default)

    def next_distribution(self, prefix) -> PrefixDistribution:
        tokens = _validated_prefix(prefix)
        _check_in_vocabulary(tokens, self.vocabulary)
        dist = self._rows.get(tokens)
        if dist is None:
            if self._default is None:
                raise ProviderError(
                    f"no table row for prefix {list(tokens)!r} and no default row"
                )
            dist = self._default
        if dist.prefix_len != len(tokens):
            dist = PrefixDistribution(
                probs=dist.probs, prefix_len=len(tokens), tail_mass=dist.tail_mass
            )
        return dist

    def batch_prefix_distributions(self, tokens) -> list[PrefixDistribution]:
        seq = _validated_prefix(tokens)
        if not seq:
            raise ConfigurationError("token sequence must be non-empty")
        return _batch_by_loop(self, seq)


class HttpProvider:
    """Client for an external logits server.

    Wire contract: ``POST {endpoint}/prefix_distributions`` with body
    ``{"tokens": [...], "top_k": k}``; the response carries one top-k list
    per prefix plus per-prefix tail masses, each summing to 1 within 1e-4.
    Responses outside that tolerance are rejected at this boundary; accepted
    ones are rescaled to exact unit mass before anything downstream sees
    them. Timeouts are retried up to ``retries`` times.

    Unlike the in-process kinds, the server is free to answer differently
    on identical requests, so no determinism is promised here.
    """

    deterministic = False

    def __init__(self, endpoint, timeout_ms=5000, retries=2, top_k=50, session=None):
        if not endpoint:
            raise ConfigurationError("http provider requires an endpoint")
        if timeout_ms <= 0:
            raise ConfigurationError(f"timeout_ms must be positive, got {timeout_ms!r}")
        if retries < 0:
            raise ConfigurationError(f"retries must be >= 0, got {retries!r}")
        self.endpoint = endpoint.rstrip("/")
        self.timeout_ms = timeout_ms
        self.retries = retries
        self.top_k = top_k
        self._session = session or requests.Session()
        self.vocabulary = None

    def supports_empty_prefix(self) -> bool:
        return False

    def _post(self, payload: dict) -> dict:
        url = f"{self.endpoint}/prefix_distributions"
        last_timeout = None
        for _ in range(self.retries + 1):
            try:
                resp = self._session.post(
                    url, json=payload, timeout=self.timeout_ms / 1000.0
                )
            except requests.Timeout as exc:
                last_timeout = exc
                continue
            except requests.RequestException as exc:
                raise ProviderError(f"transport failure calling {url}: {exc}") from exc
            if not 200 <= resp.status_code < 300:
                raise ProviderError(
                    f"logits server returned HTTP {resp.status_code} for {url}"
                )
            try:
                return resp.json()
            except ValueError as exc:
                raise ProviderError(f"malformed JSON from {url}: {exc}") from exc
        raise ProviderError(
            f"timed out calling {url} after {self.retries + 1} attempts"
        ) from last_timeout

    def _parse_one(self, entries, tail, prefix_len: int) -> PrefixDistribution:
        try:
            probs = {e["token"]: float(e["prob"]) for e in entries}
            tail = float(tail)
        except (TypeError, KeyError, ValueError) as exc:
            raise ProviderError(f"malformed distribution entry: {exc}") from exc
        if len(probs) != len(entries):
            raise ProviderError("duplicate tokens in server distribution")
        if tail < 0.0 or any(p < 0.0 for p in probs.values()):
            raise ProviderError("server distribution has a negative probability")
        total = sum(probs.values()) + tail
        if abs(total - 1.0) > HTTP_MASS_TOL:
            raise ProviderError(
                f"server distribution mass is {total:.6f}, "
                f"outside 1 +/- {HTTP_MASS_TOL}"
            )
        probs = {t: p / total for t, p in probs.items()}
        return PrefixDistribution(
            probs=probs, prefix_len=prefix_len, tail_mass=tail / total
        )

    def batch_prefix_distributions(self, tokens) -> list[PrefixDistribution]:
        seq = _validated_prefix(tokens)
        if not seq:
            raise ConfigurationError("token sequence must be non-empty")
        body = self._post({"tokens": list(seq), "top_k": self.top_k})
        try:
            dists = body["distributions"]
            tails = body["tail_mass"]
        except (TypeError, KeyError) as exc:
            raise ProviderError(f"malformed response body: {exc}") from exc
        if len(dists) != len(seq) or len(tails) != len(seq):
            raise ProviderError(
                f"server returned {len(dists)} distributions for {len(seq)} prefixes"
            )
        return [
            self._parse_one(entries, tails[i], prefix_len=i + 1)
            for i, entries in enumerate(dists)
        ]

    def next_distribution(self, prefix) -> PrefixDistribution:
        return self.batch_prefix_distributions(prefix)[-1]


class SerializingProvider:
    """Wraps a provider so concurrent callers take turns.

    Applied by the harness to providers that are not known to tolerate
    concurrent in-flight requests (the HTTP kind).
    """

    def __init__(self, inner):
        self._inner = inner
        self._lock = threading.Lock()

    @property
    def deterministic(self):
        return self._inner.deterministic

    @property
    def vocabulary(self):
        return self._inner.vocabulary

    def supports_empty_prefix(self) -> bool:
        return self._inner.supports_empty_prefix()

    def next_distribution(self, prefix) -> PrefixDistribution:
        with self._lock:
            return self._inner.next_distribution(prefix)

    def batch_prefix_distributions(self, tokens) -> list[PrefixDistribution]:
        with self._lock:
            return self._inner.batch_prefix_distributions(tokens)


def next_distribution(provider, prefix) -> PrefixDistribution:
    """Next-token distribution after ``prefix`` (module-level convenience)."""
    return provider.next_distribution(prefix)


def batch_prefix_distributions(provider, tokens) -> list[PrefixDistribution]:
    """One distribution per prefix x_1..x_i, for i = 1..n."""
    return provider.batch_prefix_distributions(tokens)


PROVIDER_KINDS = ("ngram", "http", "table")

_REQUIRED_PARAMETERS = {
    "ngram": ("corpus", "order", "alpha"),
    "http": ("endpoint",),
    "table": ("table",),
}


@dataclass(frozen=True)
class ProviderDescriptor:
    """Kind plus the kind-specific configuration needed to build a provider."""

    kind: str
    parameters: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in PROVIDER_KINDS:
            raise ConfigurationError(
                f"unknown provider kind {self.kind!r}, expected one of {PROVIDER_KINDS}"
            )
        missing = [
            key for key in _REQUIRED_PARAMETERS[self.kind] if key not in self.parameters
        ]
        if missing:
            raise ConfigurationError(
                f"provider kind {self.kind!r} is missing parameters {missing}"
            )

    def to_config(self) -> dict:
        params = {
            k: (str(v) if isinstance(v, Path) else v)
            for k, v in self.parameters.items()
        }
        return {"kind": self.kind, "parameters": params}

    def build(self):
        if self.kind == "ngram":
            corpus = Path(self.parameters["corpus"]).read_text(encoding="utf-8")
            return train_ngram(
                corpus,
                order=int(self.parameters["order"]),
                alpha=float(self.parameters["alpha"]),
            )
        if self.kind == "table":
            table = self.parameters["table"]
            if isinstance(table, (str, Path)):
                table = json.loads(Path(table).read_text(encoding="utf-8"))
            return TableProvider.from_json_dict(table)
        return HttpProvider(
            endpoint=self.parameters["endpoint"],
            timeout_ms=int(self.parameters.get("timeout_ms", 5000)),
            retries=int(self.parameters.get("retries", 2)),
            top_k=int(self.parameters.get("top_k", 50)),
        )
