"""Regenerate the SCM fixtures shipped in src/asrcause/data.

Run from the repository root: ``python tools/make_fixtures.py``.
"""

import itertools
import json
import math
from pathlib import Path

OUT = Path(__file__).resolve().parents[1] / "src" / "asrcause" / "data"

AGE = ["Young", "Middle", "Older"]
GENDER = ["F", "M"]
LMH = ["Low", "Average", "High"]
SNR = ["Noisy", "Average", "Clean"]
WORDS = ["Q1", "Q2", "Q3", "Q4"]


def ordered_logit(score, cuts):
    cdf = [1 / (1 + math.exp(-(c - score))) for c in cuts] + [1.0]
    probs = [cdf[0]] + [cdf[i] - cdf[i - 1] for i in range(1, len(cdf))]
    probs = [round(p, 6) for p in probs]
    probs[-1] = round(1.0 - sum(probs[:-1]), 6)
    return probs


def gop_row(age, vocab, words):
    a, v, w = AGE.index(age), LMH.index(vocab), WORDS.index(words)
    score = 1.6 * (a - 1) - 1.6 * (v - 1) - 1.2 * (w - 1.5)
    return ordered_logit(score, (-1.0, 1.0))


def key(*levels):
    return ",".join(levels)


def asr_fixture():
    nodes = [
        {"name": "Age", "levels": AGE, "role": "physiological", "cpt": {"": [0.3, 0.4, 0.3]}},
        {"name": "Gender", "levels": GENDER, "role": "physiological", "cpt": {"": [0.5, 0.5]}},
        {"name": "NumWords", "levels": WORDS, "role": "extrinsic", "cpt": {"": [0.25, 0.25, 0.25, 0.25]}},
        {"name": "SNR", "levels": SNR, "role": "extrinsic", "cpt": {"": [0.3, 0.4, 0.3]}},
        {"name": "VocabDifficulty", "levels": LMH, "role": "extrinsic",
         "cpt": {"": [0.333334, 0.333333, 0.333333]}},
        {"name": "GoP", "levels": LMH, "role": "cognitive",
         "cpt": {key(a, w, v): gop_row(a, v, w) for a, w, v in itertools.product(AGE, WORDS, LMH)}},
        # outcome parents in lexicographic order: Age, GoP, NumWords
        {"name": "Subs", "levels": [], "role": "error", "noise": 2.0,
         "means": {key(a, g, w): round(10.0 - 1.5 * AGE.index(a) - 1.2 * LMH.index(g) - 1.0 * WORDS.index(w), 6)
                   for a, g, w in itertools.product(AGE, LMH, WORDS)}},
        {"name": "Del", "levels": [], "role": "error", "noise": 0.5,
         "means": {key(w): round(1.0 + 0.4 * WORDS.index(w), 6) for w in WORDS}},
        # parents: GoP, SNR
        {"name": "Ins", "levels": [], "role": "error", "noise": 0.6,
         "means": {key(g, s): round(3.5 - 0.6 * LMH.index(g) - 0.8 * SNR.index(s), 6)
                   for g, s in itertools.product(LMH, SNR)}},
    ]
    edges = [
        ["Age", "GoP"], ["VocabDifficulty", "GoP"], ["NumWords", "GoP"],
        ["Age", "Subs"], ["GoP", "Subs"], ["NumWords", "Subs"],
        ["NumWords", "Del"],
        ["GoP", "Ins"], ["SNR", "Ins"],
    ]
    return {
        "name": "asr_errors",
        "notes": (
            "ASR error DAG: Age, VocabDifficulty and NumWords drive GoP; Age, GoP and NumWords "
            "drive Subs; NumWords drives Del; GoP and SNR drive Ins. Gender is isolated. CPT and "
            "mean-table magnitudes are synthetic, chosen for strong faithfulness."
        ),
        "seed": 1,
        "nodes": nodes,
        "edges": edges,
    }


def latent_fixture():
    b = ["0", "1"]
    child = {"0,0": [0.9, 0.1], "0,1": [0.6, 0.4], "1,0": [0.4, 0.6], "1,1": [0.1, 0.9]}
    return {
        "name": "latent_confounder",
        "notes": (
            "Hidden common cause L of A and B, with anchors X -> A and Y -> B so that the "
            "confounded pair is flanked by unshielded colliders. L is dropped before discovery."
        ),
        "seed": 1,
        "hidden": ["L"],
        "nodes": [
            {"name": "L", "levels": b, "cpt": {"": [0.5, 0.5]}},
            {"name": "X", "levels": b, "cpt": {"": [0.5, 0.5]}},
            {"name": "Y", "levels": b, "cpt": {"": [0.5, 0.5]}},
            # parents (L, X) and (L, Y): the hidden cause is the first key component
            {"name": "A", "levels": b, "cpt": child},
            {"name": "B", "levels": b, "cpt": child},
        ],
        "edges": [["L", "A"], ["X", "A"], ["L", "B"], ["Y", "B"]],
    }


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    for fx in (asr_fixture(), latent_fixture()):
        (OUT / f"{fx['name']}.json").write_text(json.dumps(fx, indent=1) + "\n")


if __name__ == "__main__":
    main()
