#!/usr/bin/env python3
"""Regenerate the committed desk-scale fixtures in data/.

Writes three files, all deterministic for a given seed:

* ``toy_corpus.txt``     -- templated fact sentences for the toy n-gram LM
* ``mc_dataset.jsonl``   -- 200 multiple-choice items whose answers are the
                            corpus facts (4 relations x 50 subjects)
* ``demo_corpus.txt``    -- a small corpus with a misleading distractor,
                            used by the generation demo and its tests

Each question carries exactly one subject token that selects the fact; the
surrounding template words are deliberately common so that information
scores concentrate on the subject and on the final context token.
"""

import argparse
import json
from pathlib import Path

import numpy as np

TEMPLATES = {
    "capital": "i would like to know : the capital of {x} is",
    "currency": "please tell us now about this : the currency of {x} is",
    "language": "we should all recall today that the language of {x} is",
    "colour": "you may remember from class : the colour of {x} is",
}

SUBJECT_SYLLABLES = ["zor", "bel", "tar", "mun", "vil", "kra", "dos", "fen", "gul", "pra"]
SUBJECT_TAILS = ["via", "land", "mark", "stan", "nia", "dor", "heim", "gard", "lia", "ton"]
VALUE_SYLLABLES = ["mi", "da", "ko", "ru", "se", "ta", "lo", "ni", "va", "pe"]
VALUE_TAILS = ["relle", "duna", "vio", "kemp", "zane", "lyra", "bruk", "sola", "mint", "gora"]

FACTS_PER_RELATION = 50
CORPUS_COPIES = 2

DEMO_CORPUS = """\
the capital of australia is canberra .
the capital of australia is canberra .
the capital canberra is a planned city .
the territory of canberra holds the parliament .
many people say the biggest city of australia is sydney .
many people say the biggest city of australia is sydney .
many people say the biggest city of australia is sydney .
the harbour city is sydney .
"""


def _names(rng, syllables, tails, count, taken):
    out = []
    while len(out) < count:
        name = rng.choice(syllables) + rng.choice(syllables) + rng.choice(tails)
        if name not in taken:
            taken.add(name)
            out.append(name)
    return out


def build_fixtures(seed: int):
    rng = np.random.default_rng(seed)
    taken = set()
    corpus_lines = []
    items = []
    for relation, template in TEMPLATES.items():
        subjects = _names(rng, SUBJECT_SYLLABLES, SUBJECT_TAILS, FACTS_PER_RELATION, taken)
        values = _names(rng, VALUE_SYLLABLES, VALUE_TAILS, FACTS_PER_RELATION, taken)
        for idx, (subject, value) in enumerate(zip(subjects, values)):
            question = template.format(x=subject)
            corpus_lines.extend([f"{question} {value} ."] * CORPUS_COPIES)
            wrong = [values[i] for i in rng.permutation(FACTS_PER_RELATION) if values[i] != value][:3]
            choices = wrong[:]
            correct_index = int(rng.integers(0, 4))
            choices.insert(correct_index, value)
            items.append(
                {
                    "id": f"{relation}-{idx:03d}",
                    "question": question,
                    "choices": choices,
                    "correct_index": correct_index,
                }
            )
    order = rng.permutation(len(corpus_lines))
    corpus_lines = [corpus_lines[i] for i in order]
    return corpus_lines, items


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=20240601)
    parser.add_argument("--out-dir", default=Path(__file__).resolve().parents[1] / "data")
    args = parser.parse_args()

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    corpus_lines, items = build_fixtures(args.seed)

    (out_dir / "toy_corpus.txt").write_text("\n".join(corpus_lines) + "\n", encoding="utf-8")
    with open(out_dir / "mc_dataset.jsonl", "w", encoding="utf-8") as fh:
        for item in items:
            fh.write(json.dumps(item) + "\n")
    (out_dir / "demo_corpus.txt").write_text(DEMO_CORPUS, encoding="utf-8")
    print(f"wrote {len(corpus_lines)} corpus lines and {len(items)} items to {out_dir}")


if __name__ == "__main__":
    main()
