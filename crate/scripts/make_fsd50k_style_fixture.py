#!/usr/bin/env python3
"""Generate the FSD50K-style taxonomy fixture shipped under data/fsd50k_style/.

The curated tree below is the intended outcome. The generator derives noisy
annotations from it (alternate parents, duplicate labels, stray branches,
parentless labels) together with a corrections file that undoes the noise.
Running `soundcot taxonomy` on the output must land back on the curated tree.

Usage: python3 scripts/make_fsd50k_style_fixture.py [out_dir]
"""

import random
import sys
from pathlib import Path

L = None  # leaf marker

CURATED = {
    "Music": {
        "Musical_instrument": {
            "Plucked_string_instrument": {
                "Guitar": {"Electric_guitar": L, "Bass_guitar": L, "Acoustic_guitar": L},
                "Harp": L,
            },
            "Bowed_string_instrument": {"Violin_and_fiddle": L, "Cello": L, "Double_bass": L},
            "Keyboard_(musical)": {"Piano": L, "Organ": L, "Synthesizer": L},
            "Percussion": {
                "Drum": {"Snare_drum": L, "Bass_drum": L, "Tabla": L},
                "Cymbal": {"Crash_cymbal": L, "Hi-hat": L},
                "Mallet_percussion": {"Glockenspiel": L, "Marimba_and_xylophone": L},
                "Tambourine": L,
                "Gong": L,
                "Drum_kit": L,
            },
            "Brass_instrument": {"Trumpet": L, "Trombone": L},
            "Wind_instrument_and_woodwind_instrument": {
                "Flute": L, "Clarinet": L, "Saxophone": L, "Harmonica": L,
            },
            "Bell": {"Church_bell": L, "Chime": L, "Wind_chime": L},
        },
    },
    "Human_voice": {
        "Speech": {
            "Male_speech_and_man_speaking": L,
            "Female_speech_and_woman_speaking": L,
            "Child_speech_and_kid_speaking": L,
            "Whispering": L,
        },
        "Shout": {"Yell": L, "Screaming": L},
        "Laughter": {"Giggle": L, "Chuckle_and_chortle": L},
        "Crying_and_sobbing": {"Baby_cry_and_infant_cry": L, "Whimper": L},
        "Singing": {"Male_singing": L, "Female_singing": L, "Choir": L},
    },
    "Respiratory_sounds": {"Breathing": L, "Cough": L, "Sneeze": L, "Gasp": L},
    "Human_group_actions": {"Applause": L, "Cheering": L, "Crowd": L, "Chatter": L},
    "Human_body_sounds": {"Hands": {"Clapping": L, "Finger_snapping": L}, "Walk_and_footsteps": L, "Run": L},
    "Animal": {
        "Domestic_animals_and_pets": {
            "Dog": {"Bark": L, "Growling": L},
            "Cat": {"Meow": L, "Purr": L},
        },
        "Livestock_and_farm_animals": {
            "Fowl": {"Chicken_and_rooster": L, "Duck": L},
            "Cattle_and_bovinae": L,
            "Pig": L,
        },
        "Wild_animals": {
            "Bird": {
                "Bird_vocalization_and_bird_call_and_bird_song": {"Chirp_and_tweet": L, "Squawk": L},
                "Gull_and_seagull": L,
                "Crow": L,
            },
            "Insect": {"Cricket": L, "Fly_and_housefly": L, "Bee_and_wasp": L},
            "Frog": L,
        },
    },
    "Vehicle": {
        "Motor_vehicle_(road)": {
            "Car": {"Car_passing_by": L, "Vehicle_horn_and_car_horn_and_honking": L},
            "Truck": L,
            "Motorcycle": L,
        },
        "Rail_transport": {"Train": L},
        "Aircraft": {"Fixed-wing_aircraft_and_airplane": L, "Helicopter": L},
        "Boat_and_water_vehicle": L,
        "Bicycle": L,
    },
    "Domestic_sounds_and_home_sounds": {
        "Door": {"Knock": L, "Slam": L},
        "Typing": {"Computer_keyboard": L, "Typewriter": L},
        "Cupboard_open_or_close": L,
        "Drawer_open_or_close": L,
        "Dishes_and_pots_and_pans": L,
        "Toilet_flush": L,
        "Frying_(food)": L,
        "Writing": L,
    },
    "Mechanisms": {
        "Clock": {"Tick": L, "Tick-tock": L},
        "Ratchet_and_pawl": L,
        "Mechanical_fan": L,
    },
    "Tools": {
        "Power_tool": {"Drill": L, "Chainsaw": L},
        "Hammer": L,
        "Sawing": L,
    },
    "Liquid": {
        "Pour": L, "Drip": L, "Boiling": L, "Splash_and_splatter": L,
        "Trickle_and_dribble": L,
    },
    "Water": {
        "Rain": {"Raindrop": L, "Rain_on_surface": L},
        "Stream": L,
        "Ocean": L,
    },
    "Wind": {"Rustling_leaves": L, "Wind_noise_(microphone)": L},
    "Fire": {"Crackle": L, "Burning": L},
    "Thunderstorm": {"Thunder": L, "Hail": L},
    "Explosion": {"Gunshot_and_gunfire": L, "Fireworks": L, "Burst_and_pop": L},
    "Alarm": {
        "Telephone": {"Ringtone": L, "Dial_tone": L},
        "Siren": L,
    },
    "Glass": {"Chink_and_clink": L, "Shatter": L},
}

# Noise injected into the raw annotations. Each entry is undone by a rule.
#
# Leaves merged into a curated leaf (duplicate vocabulary).
MERGED_LEAVES = {"Caw": "Crow", "Honk": "Vehicle_horn_and_car_horn_and_honking", "Clock_tick": "Tick"}
# Duplicate internal node owning some children; merged into its curated twin.
DUPLICATE_INTERNAL = ("Pets", "Domestic_animals_and_pets", ["Cat"])
# Nodes whose dominant raw parent is wrong; corrected with move_under.
MISPLACED = {
    "Chirp_and_tweet": "Bird",
    "Harmonica": "Musical_instrument",
    "Gong": "Bell",
    "Writing": "Typing",
}
# A stray branch that the rules prune leaf-first.
STRAY_BRANCH = ("Tools", "Garden_tools", ["Lawn_mower", "Hedge_trimmer"])
# Improper leaves removed outright.
REMOVED_LEAVES = {"Speech": "Narration", "Car": "Engine_starting", "Liquid": "Liquid_generic"}
# Labels that are never given a parent; the final pass drops them.
ROOT_LEAVES = ["Hiss", "Buzz", "Rattle", "Squeak", "Whoosh_and_swoosh_and_swish", "Thump_and_thud"]
# Minor alternate parents (lower weight than the dominant one).
ALTERNATE_PARENTS = {
    "Guitar": "Music",
    "Piano": "Music",
    "Bass_guitar": "Bass_drum",
    "Cymbal": "Drum",
    "Bark": "Animal",
    "Choir": "Music",
    "Singing": "Music",
    "Crowd": "Human_voice",
    "Train": "Vehicle",
    "Thunder": "Water",
    "Boiling": "Domestic_sounds_and_home_sounds",
    "Frying_(food)": "Liquid",
    "Chainsaw": "Vehicle",
    "Wind_chime": "Wind",
}
SCREENED_OUT = [
    ("Baby_cry_and_infant_cry", "Whimper"),
    ("Chuckle_and_chortle", "Giggle"),
    ("Tick", "Tick-tock"),
    ("Raindrop", "Rain_on_surface"),
    ("Drip", "Trickle_and_dribble"),
    ("Yell", "Screaming"),
]

DEV_SAMPLES_PER_LEAF = (12, 30)
EVAL_TOTAL = 10231
EVAL_RESOLVABLE = 7227


def walk(tree, parent=None, depth=1, out=None):
    if out is None:
        out = []
    for name, sub in tree.items():
        out.append((name, parent, depth, sub is None))
        if sub is not None:
            walk(sub, name, depth + 1, out)
    return out


def main():
    out_dir = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).resolve().parent.parent / "data" / "fsd50k_style"
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = random.Random(50)

    nodes = walk(CURATED)
    parent = {n: p for n, p, _, _ in nodes}
    leaves = [n for n, _, _, leaf in nodes if leaf]
    assert len(nodes) == 175, len(nodes)
    assert len(leaves) == 120, len(leaves)
    assert sum(1 for _, p, _, _ in nodes if p is None) == 18
    assert max(d for _, _, d, _ in nodes) == 5

    # Raw parent map: curated structure with the injected noise.
    raw_parent = dict(parent)
    for child, wrong in MISPLACED.items():
        raw_parent[child] = wrong
    dup, twin, moved = DUPLICATE_INTERNAL
    raw_parent[dup] = parent[twin]
    for child in moved:
        raw_parent[child] = dup
    for sub, target in MERGED_LEAVES.items():
        raw_parent[sub] = parent[target]
    stray_parent, stray, stray_leaves = STRAY_BRANCH
    raw_parent[stray] = stray_parent
    for leaf in stray_leaves:
        raw_parent[leaf] = stray
    for p, leaf in REMOVED_LEAVES.items():
        raw_parent[leaf] = p
    for leaf in ROOT_LEAVES:
        raw_parent[leaf] = None

    raw_children = {}
    for c, p in raw_parent.items():
        raw_children.setdefault(p, []).append(c)
    raw_leaves = [n for n in raw_parent if n not in raw_children]

    def raw_path(label):
        path = [label]
        while raw_parent[path[-1]] is not None:
            path.append(raw_parent[path[-1]])
        return path

    def relations(path):
        return [f"{path[i + 1]}>{path[i]}" for i in range(len(path) - 1)]

    # Dev annotations: every raw leaf gets a sample block; label list is leaf
    # first followed by its ancestors, FSD50K-style.
    dev = []
    sid = 100000
    for leaf in sorted(raw_leaves):
        n = rng.randint(*DEV_SAMPLES_PER_LEAF)
        alt_budget = n // 4
        for i in range(n):
            path = raw_path(leaf)
            labels = list(path)
            rels = relations(path)
            # alternate parents on a minority of samples
            for node in path:
                alt = ALTERNATE_PARENTS.get(node)
                if alt is not None and i < alt_budget:
                    rels.append(f"{alt}>{node}")
                    if alt not in labels:
                        labels.append(alt)
            # occasional co-occurring second sound
            if rng.random() < 0.15:
                other = rng.choice(raw_leaves)
                if other != leaf:
                    op = raw_path(other)
                    for x in op:
                        if x not in labels:
                            labels.append(x)
                    for r in relations(op):
                        if r not in rels:
                            rels.append(r)
            dev.append((str(sid), labels, rels))
            sid += 1

    with open(out_dir / "dev_annotations.tsv", "w") as f:
        f.write("sample_id\tlabels\trelations\n")
        for s, labels, rels in dev:
            f.write(f"{s}\t{','.join(labels)}\t{';'.join(rels)}\n")

    rules = [
        "# Corrections applied after dominant-parent pruning, in order.",
        "# Format: action subject [target]",
        "version 1",
    ]
    for sub, target in sorted(MERGED_LEAVES.items()):
        rules.append(f"merge_into {sub} {target}")
    rules.append(f"merge_into {dup} {twin}")
    for child in sorted(MISPLACED):
        rules.append(f"move_under {child} {parent[child]}")
    for leaf in stray_leaves:
        rules.append(f"remove_node {leaf}")
    rules.append(f"remove_node {stray}")
    for _, leaf in sorted(REMOVED_LEAVES.items()):
        rules.append(f"remove_node {leaf}")
    with open(out_dir / "rules.txt", "w") as f:
        f.write("\n".join(rules) + "\n")

    # Eval split: EVAL_RESOLVABLE samples whose first label resolves to a
    # curated leaf (directly or through a merged alias); the rest start with
    # an internal or discarded label.
    aliases = list(MERGED_LEAVES)
    weights = [rng.uniform(0.3, 3.0) for _ in leaves]
    unresolvable_pool = (
        [n for n, _, _, leaf in nodes if not leaf]
        + ROOT_LEAVES
        + stray_leaves
        + list(REMOVED_LEAVES.values())
    )
    rows = []
    for i in range(EVAL_TOTAL):
        if i < EVAL_RESOLVABLE:
            if i % 97 == 0:
                first = aliases[(i // 97) % len(aliases)]
            else:
                first = rng.choices(leaves, weights)[0]
        else:
            first = rng.choice(unresolvable_pool)
        labels = raw_path(first) if first in raw_parent else [first]
        rows.append(labels)
    order = list(range(EVAL_TOTAL))
    rng.shuffle(order)
    with open(out_dir / "eval_annotations.tsv", "w") as f:
        f.write("sample_id\tlabels\trelations\n")
        for k, idx in enumerate(order):
            labels = rows[idx]
            f.write(f"{200000 + k}\t{','.join(labels)}\t{';'.join(relations(labels))}\n")

    with open(out_dir / "screening_verdicts.tsv", "w") as f:
        f.write("# Pairs an LLM screener judged indistinguishable (answered no).\n")
        for a, b in SCREENED_OUT:
            if b is not None:
                f.write(f"{a}\t{b}\n")

    print(f"dev samples: {len(dev)}; eval samples: {EVAL_TOTAL} ({EVAL_RESOLVABLE} resolvable)")


if __name__ == "__main__":
    main()
