"""Train the toy detector under a few config overrides and report loss drop,
held-out recall and false positives per image.

    python scripts/sweep_toy.py "head.fc_width = 512" "thin.c_mid = 32"
"""
import sys
import time

import numpy as np

from lighthead.config import parse_config, toy_config
from lighthead.pipeline import evaluate, scene_stream, train_toy


def run(override: str, iters: int = 500, n_eval: int = 50):
    cfg = parse_config("preset = toy\n" + override.replace(";", "\n"))
    t0 = time.perf_counter()
    res = train_toy(cfg, iters=iters)
    losses = np.array(res.losses)
    held = scene_stream(cfg, cfg.train.seed, 1)
    ev = evaluate(res.detector, [next(held) for _ in range(n_eval)])
    drop = 1 - losses[-50:].mean() / losses[:50].mean()
    print(f"{override or '(toy)':<50} drop={drop:.3f} recall={ev.recall:.3f} "
          f"fp/img={ev.false_positives_per_image:.2f} time={time.perf_counter() - t0:.0f}s", flush=True)


if __name__ == "__main__":
    for ov in sys.argv[1:] or [""]:
        run(ov)
