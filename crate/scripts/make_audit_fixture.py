#!/usr/bin/env python3
"""Generate annotated audit workbooks under data/audit_fixture/.

One workbook per (model, subset) over the items of data/aqa_style/manifest.jsonl.
Each row gets one of the six (prediction, reasoning, causality) cells; the
per-cell counts are fixed below and the assignment to items is shuffled with
a fixed seed. Reasoning and conclusion texts are placeholders.

Usage: python3 scripts/make_audit_fixture.py [out_dir]
"""

import csv
import json
import random
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
SEED = 20251014

# (correct, reasoning_correct, causal) in report order
CELLS = [
    (True, True, True),
    (True, False, True),
    (True, False, False),
    (False, False, False),
    (False, False, True),
    (False, True, False),
]

COUNTS = {
    ("af2", "AQA-YesNo"): [45, 2, 15, 0, 11, 1],
    ("af3", "AQA-YesNo"): [53, 4, 2, 1, 9, 5],
    ("af2", "AQA-MCQ"): [40, 3, 6, 8, 11, 8],
    ("af3", "AQA-MCQ"): [48, 2, 6, 6, 12, 2],
}

HEADER = [
    "item_id", "subset", "audio", "question", "choices", "reasoning", "conclusion",
    "predicted", "gold", "choice_count", "reasoning_correct", "causal",
]


def render_choices(choices):
    return " ".join(f"({chr(65 + i)}) {c}." for i, c in enumerate(choices))


def main():
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else ROOT / "data" / "audit_fixture"
    out.mkdir(parents=True, exist_ok=True)
    items = [json.loads(l) for l in (ROOT / "data/aqa_style/manifest.jsonl").read_text().splitlines() if l.strip()]
    for (model, subset), counts in COUNTS.items():
        rows = [i for i in items if i["subset"] == subset]
        assert len(rows) == sum(counts), (model, subset)
        cells = [c for c, n in zip(CELLS, counts) for _ in range(n)]
        random.Random(f"{SEED}-{model}-{subset}").shuffle(cells)
        slug = "yesno" if subset == "AQA-YesNo" else "mcq"
        with open(out / f"{model}-{slug}.tsv", "w", newline="") as f:
            w = csv.writer(f, delimiter="\t", lineterminator="\n")
            w.writerow(HEADER)
            for item, (correct, reasoning, causal) in zip(rows, cells):
                gold = item["gold"]
                k = len(item["choices"])
                if correct:
                    pred = gold
                else:
                    pred = chr(65 + (ord(gold) - 65 + 1) % k)
                answer = item["choices"][ord(pred) - 65]
                w.writerow([
                    item["item_id"], subset, item["audio"], item["question"],
                    render_choices(item["choices"]),
                    "The clip is considered step by step before answering.",
                    f"The answer is ({pred}) {answer}.",
                    pred, gold, k,
                    "yes" if reasoning else "no",
                    "yes" if causal else "no",
                ])


if __name__ == "__main__":
    main()
