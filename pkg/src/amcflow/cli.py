"""Command-line surface.

Subcommands: eval-mc, mask-experiment, inspect, generate, train-ngram.
Exit codes: 0 success, 2 configuration error, 3 provider error, 4 dataset
error (argparse itself exits 2 on bad flags).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .chain import DEFAULT_DELTA_ABS, DEFAULT_SCORE_CAP
from .decoding import DEFAULT_LAMBDA, MODE_AMC, MODES, generate
from .errors import ConfigurationError, DatasetError, ProviderError
from .harness import (
    MASK_POLICIES,
    MaskSpec,
    MaskTable,
    eval_mc,
    inspect_context,
    inspect_to_csv,
    inspect_to_json,
    mask_experiment,
    prepare_provider,
)
from .providers import MASK_TOKEN, ProviderDescriptor, TokenSequence, train_ngram
from .transition import BuildPolicy, DUPLICATE_POLICIES


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in text.split(",") if part.strip() != "")
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _shared_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--provider", choices=["ngram", "http", "table"], default="ngram")
    parser.add_argument("--corpus", help="corpus text file (ngram provider)")
    parser.add_argument("--order", type=int, default=3)
    parser.add_argument("--alpha", type=float, default=0.01)
    parser.add_argument("--table", help="table JSON file (table provider)")
    parser.add_argument("--endpoint", default=os.environ.get("AMCFLOW_ENDPOINT"))
    parser.add_argument(
        "--timeout-ms", type=int,
        default=int(os.environ.get("AMCFLOW_TIMEOUT_MS", "5000")),
    )
    parser.add_argument(
        "--retries", type=int, default=int(os.environ.get("AMCFLOW_RETRIES", "2"))
    )
    parser.add_argument("--top-k", type=int, default=50, help="top-k for the http provider")
    parser.add_argument("--lambda", dest="lam", type=float, default=DEFAULT_LAMBDA)
    parser.add_argument("--delta-abs", type=float, default=DEFAULT_DELTA_ABS)
    parser.add_argument("--score-cap", type=float, default=DEFAULT_SCORE_CAP)
    parser.add_argument(
        "--duplicate-policy", choices=list(DUPLICATE_POLICIES), default="full-mass"
    )
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--format", choices=["json", "csv"], default="json")
    parser.add_argument("--output", help="write the result document here instead of stdout")


def _descriptor(args) -> ProviderDescriptor:
    if args.provider == "ngram":
        if not args.corpus:
            raise ConfigurationError("--provider ngram requires --corpus")
        return ProviderDescriptor(
            "ngram", {"corpus": args.corpus, "order": args.order, "alpha": args.alpha}
        )
    if args.provider == "table":
        if not args.table:
            raise ConfigurationError("--provider table requires --table")
        return ProviderDescriptor("table", {"table": args.table})
    if not args.endpoint:
        raise ConfigurationError(
            "--provider http requires --endpoint (or AMCFLOW_ENDPOINT)"
        )
    return ProviderDescriptor(
        "http",
        {
            "endpoint": args.endpoint,
            "timeout_ms": args.timeout_ms,
            "retries": args.retries,
            "top_k": args.top_k,
        },
    )


def _policy(args) -> BuildPolicy:
    return BuildPolicy(duplicate_policy=args.duplicate_policy, delta_abs=args.delta_abs)


def _emit(text: str, output: str | None) -> None:
    if output:
        with open(output, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
        if not text.endswith("\n"):
            sys.stdout.write("\n")


def _cmd_eval_mc(args) -> int:
    report = eval_mc(
        args.dataset,
        _descriptor(args),
        lam=args.lam,
        mode=args.mode,
        policy=_policy(args),
        score_cap=args.score_cap,
        length_normalize=args.length_normalize,
        jobs=args.jobs,
        seed=args.seed,
    )
    _emit(report.to_json(), args.output)
    return 0


def _cmd_mask_experiment(args) -> int:
    policies = list(MASK_POLICIES) if args.mask_policy == "both" else [args.mask_policy]
    rows = []
    for policy_name in policies:
        spec = MaskSpec(
            k_values=args.k_values,
            policy=policy_name,
            seeds=args.mask_seeds if policy_name == "random" else (),
            mask_token=args.mask_token,
        )
        table = mask_experiment(
            args.dataset,
            _descriptor(args),
            spec,
            lam=args.lam,
            mode=args.mode,
            policy=_policy(args),
            score_cap=args.score_cap,
            length_normalize=args.length_normalize,
            jobs=args.jobs,
        )
        rows.extend(table.rows)
    _emit(MaskTable(rows=tuple(rows)).to_csv(), args.output)
    return 0


def _cmd_inspect(args) -> int:
    prompt = TokenSequence.from_text(args.prompt)
    if len(prompt) < 1:
        raise ConfigurationError("prompt must contain at least one token")
    provider = prepare_provider(_descriptor(args))
    payload = inspect_context(
        prompt,
        provider,
        policy=_policy(args),
        score_cap=args.score_cap,
        include_transitions=args.include_transitions,
    )
    text = inspect_to_csv(payload) if args.format == "csv" else inspect_to_json(payload)
    _emit(text, args.output)
    return 0


def _cmd_generate(args) -> int:
    prompt = TokenSequence.from_text(args.prompt)
    if len(prompt) < 1:
        raise ConfigurationError("prompt must contain at least one token")
    provider = prepare_provider(_descriptor(args))
    trace = generate(
        provider,
        prompt,
        lam=args.lam,
        max_tokens=args.max_tokens,
        mode=args.mode,
        policy=_policy(args),
        score_cap=args.score_cap,
    )
    if args.trace:
        with open(args.trace, "w", encoding="utf-8") as fh:
            json.dump(trace.to_json_dict(), fh, indent=2)
    sys.stdout.write(trace.text + "\n")
    return 0


def _cmd_train_ngram(args) -> int:
    if not args.corpus:
        raise ConfigurationError("train-ngram requires --corpus")
    with open(args.corpus, encoding="utf-8") as fh:
        text = fh.read()
    provider = train_ngram(text, order=args.order, alpha=args.alpha)
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            json.dump(provider.to_json_dict(), fh, indent=2)
    summary = {
        "order": provider.order,
        "alpha": provider.alpha,
        "vocabulary_size": provider.vocabulary.size,
        "contexts": len(provider._counts),
        "model_file": args.output,
    }
    sys.stdout.write(json.dumps(summary, indent=2) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="amcflow",
        description="Context information-flow analysis and adjusted decoding",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("eval-mc", help="multiple-choice accuracy over a JSONL dataset")
    _shared_flags(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--mode", choices=list(MODES), default=MODE_AMC)
    p.add_argument(
        "--length-normalize", action=argparse.BooleanOptionalAction, default=True,
        help="score choices by mean (not summed) log-probability",
    )
    p.set_defaults(func=_cmd_eval_mc)

    p = sub.add_parser(
        "mask-experiment", help="accuracy after masking top-scored vs random tokens"
    )
    _shared_flags(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--mode", choices=list(MODES), default=MODE_AMC)
    p.add_argument(
        "--length-normalize", action=argparse.BooleanOptionalAction, default=True
    )
    p.add_argument("--k-values", type=_int_list, default=(0, 5, 10, 15))
    p.add_argument(
        "--mask-policy", choices=list(MASK_POLICIES) + ["both"], default="both"
    )
    p.add_argument("--mask-seeds", type=_int_list, default=(0, 1, 2, 3, 4))
    p.add_argument("--mask-token", default=MASK_TOKEN)
    p.set_defaults(func=_cmd_mask_experiment)

    p = sub.add_parser("inspect", help="dump scores, losses and matrices for a prompt")
    _shared_flags(p)
    p.add_argument("prompt")
    p.add_argument("--include-transitions", action="store_true")
    p.set_defaults(func=_cmd_inspect)

    p = sub.add_parser("generate", help="greedy generation from a prompt")
    _shared_flags(p)
    p.add_argument("prompt")
    p.add_argument("--max-tokens", type=int, default=16)
    p.add_argument("--mode", choices=list(MODES), default=MODE_AMC)
    p.add_argument("--trace", help="write a JSON generation trace here")
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("train-ngram", help="train and serialise the toy n-gram model")
    _shared_flags(p)
    p.set_defaults(func=_cmd_train_ngram)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except ProviderError as exc:
        print(f"provider error: {exc}", file=sys.stderr)
        return 3
    except DatasetError as exc:
        print(f"dataset error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
