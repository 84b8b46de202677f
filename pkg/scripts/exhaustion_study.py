"""Solve on a shrinking-eps schedule; distance ratios and the Cauchy table."""
import time
from dataclasses import asdict, dataclass

import numpy as np

from caloron import holomap, hymflow
from common import parse, save


@dataclass
class Config:
    v: str = "1,W"
    eps_logs: str = "4,6,8"          # eps_i = exp(-value)
    delta_logs: str = "5,6,7"        # delta_i = 1 - 2^-value
    out: str = "results/exhaustion.json"


def main(cfg: Config) -> dict:
    e = holomap.blip(cfg.v.split(","))
    sched = [(np.exp(-float(a)), 1 - 2.0 ** -float(b))
             for a, b in zip(cfg.eps_logs.split(","), cfg.delta_logs.split(","))]
    t0 = time.perf_counter()
    _, rep = hymflow.exhaust(e, sched, hymflow.ProductGrid(),
                             callback=lambda i, H, d: print(f"run {i}: {d.steps} steps, "
                                                            f"max ratio {d.max_dist_ratio:.4f}"))
    ratios = [r["max_dist_ratio"] for r in rep.runs]
    res = {"config": asdict(cfg), "report": rep.to_json(), "seconds": time.perf_counter() - t0,
           "dist_ratio_spread": (max(ratios) - min(ratios)) / min(ratios)}
    for c in rep.cauchy:
        print(f"eps {c['eps']:.3e}: sup sigma {c['sup_sigma']:.4e}, / |ln eps| {c['ratio']:.4e}")
    save(cfg.out, res)
    return res


if __name__ == "__main__":
    main(parse(Config))
