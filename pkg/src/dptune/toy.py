"""Toy candidate: a noisy quadratic in the learning rate.

Usable in-process (``dptune.toy:score``) or as a subprocess speaking the
tuner protocol (``python -m dptune.toy``).
"""

import json
import sys

import numpy as np


def score(hyperparameters, seed, run_index):
    lr = float(hyperparameters.get("lr", 0.1))
    width = float(hyperparameters.get("width", 1.0))
    rng = np.random.default_rng(seed)
    value = 1.0 - 25.0 * (lr - 0.1) ** 2 / width + 0.01 * rng.standard_normal()
    return {"score": round(float(value), 12), "payload": f"model-lr{lr:g}-run{run_index}"}


def main() -> int:
    doc = json.load(sys.stdin)
    out = score(doc.get("hyperparameters", {}), int(doc["seed"]), int(doc["run_index"]))
    json.dump(out, sys.stdout)
    sys.stdout.write("\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
