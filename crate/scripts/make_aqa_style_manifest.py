#!/usr/bin/env python3
"""Generate a synthetic question-answering manifest under data/aqa_style/.

74 yes/no items and 76 four-way multiple-choice items over made-up clips.
The questions are templated; the audio URIs are opaque and never fetched.

Usage: python3 scripts/make_aqa_style_manifest.py [out_dir]
"""

import json
import random
import sys
from pathlib import Path

YES_NO = [
    "Is the door old?",
    "Is there more than one speaker?",
    "Is the recording made indoors?",
    "Does the sound get louder over time?",
    "Is an animal present?",
    "Is music playing in the background?",
    "Is the speaker shouting?",
    "Is it raining?",
]

MCQ = [
    ("Which could be the natural enemy of these animals?", ["eagle", "tiger", "octopus", "shark"]),
    ("What genre of movie could this sound be played in?", ["romance", "horror", "comedy", "action"]),
    ("What is this competition venue?", ["tennis", "badminton", "table tennis", "table soccer"]),
    ("Where was this most likely recorded?", ["in the wild", "urban street", "kitchen", "concert hall"]),
    ("What is the main sound source?", ["engine", "wind", "water", "crowd"]),
    ("How many distinct events occur?", ["one", "two", "three", "four"]),
]


def main(out_dir: Path) -> None:
    rng = random.Random(20251014)
    rows = []
    for i in range(74):
        gold = rng.choice(["A", "B"])
        choices = ["yes", "no"] if rng.random() < 0.5 else ["no", "yes"]
        rows.append({
            "item_id": f"aqa-yn-{i:03d}",
            "audio": f"aqa://clips/yn-{i:03d}.wav",
            "dataset_id": "AQA-style",
            "sample_id": f"yn-{i:03d}",
            "question": YES_NO[i % len(YES_NO)],
            "choices": choices,
            "gold": gold,
            "subset": "AQA-YesNo",
        })
    for i in range(76):
        q, choices = MCQ[i % len(MCQ)]
        choices = choices[:]
        rng.shuffle(choices)
        rows.append({
            "item_id": f"aqa-mcq-{i:03d}",
            "audio": f"aqa://clips/mcq-{i:03d}.wav",
            "dataset_id": "AQA-style",
            "sample_id": f"mcq-{i:03d}",
            "question": q,
            "choices": choices,
            "gold": "ABCD"[rng.randrange(4)],
            "subset": "AQA-MCQ",
        })
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "manifest.jsonl", "w") as f:
        for r in rows:
            f.write(json.dumps(r, separators=(",", ":")) + "\n")


if __name__ == "__main__":
    main(Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).resolve().parent.parent / "data" / "aqa_style")
