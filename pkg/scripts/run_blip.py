"""Flow a blip map to convergence on the default grid and report observables."""
import time
from dataclasses import asdict, dataclass

import numpy as np

from caloron import geometry, holomap, hymflow, instanton
from common import parse, save


@dataclass
class Config:
    v: str = "1,W"
    nx: int = 13
    nu: int = 25
    nphi: int = 8
    eps_log: float = 6.0         # eps = exp(-eps_log)
    delta: float = 1 - 2 ** -6
    cfl: float = 0.8
    tol_B: float = 1e-6
    out: str = "results/run_blip.json"


def main(cfg: Config) -> dict:
    e = holomap.blip(cfg.v.split(","))
    g = geometry.ProductGrid(nx=cfg.nx, ny=cfg.nx, nu=cfg.nu, nphi=cfg.nphi,
                             eps=float(np.exp(-cfg.eps_log)), delta=cfg.delta)
    t0 = time.perf_counter()
    H, d = hymflow.run_flow(e, g, hymflow.FlowConfig(cfl=cfg.cfl, tol_B=cfg.tol_B),
                            callback=lambda s, t, H, d: print(f"step {s:6d} t {t:8.3f} sup|B| {d.rows[-1]['sup_B']:.3e}"))
    A = instanton.connection_from_pair(H, e)
    F = instanton.curvature(A)
    res = {"config": asdict(cfg), "flow": d.summary(), "seconds": time.perf_counter() - t0,
           "charge": instanton.charge(e)[0], "degree": holomap.degree(e)[0],
           "asd": instanton.asd_residual(F, 2), "energy": instanton.energy(F, e, A)}
    save(cfg.out, res)
    return res


if __name__ == "__main__":
    main(parse(Config))
