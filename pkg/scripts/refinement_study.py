"""ASD residual order and the energy identity under one grid halving."""
import time
from dataclasses import asdict, dataclass

import numpy as np

from caloron import geometry, holomap, hymflow, instanton
from common import parse, save


@dataclass
class Config:
    v: str = "1,W"
    nx: int = 9
    nu: int = 13
    nphi: int = 12
    R_w: float = 1.0
    eps_log: float = 1.0
    delta: float = 0.8
    levels: int = 2
    margins: str = "1,2,3"            # in coarse-grid cells
    out: str = "results/refinement.json"


def main(cfg: Config) -> dict:
    e = holomap.blip(cfg.v.split(","))
    g = geometry.ProductGrid(nx=cfg.nx, ny=cfg.nx, nu=cfg.nu, nphi=cfg.nphi, R_w=cfg.R_w,
                             eps=float(np.exp(-cfg.eps_log)), delta=cfg.delta)
    margins = [int(m) for m in cfg.margins.split(",")]
    rows = []
    for lev in range(cfg.levels):
        t0 = time.perf_counter()
        H, d = hymflow.run_flow(e, g, hymflow.FlowConfig(check_every=200))
        A = instanton.connection_from_pair(H, e)
        F = instanton.curvature(A)
        en = instanton.energy(F, e, A)
        rows.append({"shape": g.shape, "steps": d.steps, "converged": d.converged,
                     "seconds": time.perf_counter() - t0,
                     "sup_plus": {m: instanton.asd_residual(F, m * 2 ** lev)["sup"] for m in margins},
                     "energy": en})
        print(g.shape, rows[-1]["sup_plus"], f"gap {en['rel_gap']:.4f}")
        g = g.refined()
    orders = {m: [float(np.log2(a["sup_plus"][m] / b["sup_plus"][m])) for a, b in zip(rows, rows[1:])]
              for m in margins}
    print("orders", orders)
    res = {"config": asdict(cfg), "levels": rows, "orders": orders}
    save(cfg.out, res)
    return res


if __name__ == "__main__":
    main(parse(Config))
