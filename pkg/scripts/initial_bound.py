"""sup |B(H_xi, eta)| / (1 - |z|) under grid refinement, strict and permissive maps."""
from dataclasses import asdict, dataclass

import numpy as np

from caloron import geometry, holomap, hymflow
from common import parse, save


@dataclass
class Config:
    levels: int = 3
    out: str = "results/initial_bound.json"


MAPS = {
    "blip degree 1": lambda: holomap.blip(["1", "W"]),
    "blip degree 2": lambda: holomap.blip(["1", "W**2"]),
    # constant off-diagonal eta(w, 0): parabolic but outside the centraliser
    "permissive": lambda: holomap.load_map({"type": "eta", "dim": 2, "xi0": [0.25, -0.25],
                                            "mode": "permissive",
                                            "coeffs": [[["0", ["1", "1 + w*W"]], ["0", "0"]]]}),
}


def main(cfg: Config) -> dict:
    res = {"config": asdict(cfg)}
    for name, make in MAPS.items():
        e = make()
        g = geometry.ProductGrid()
        vals = []
        for _ in range(cfg.levels):
            Hxi = hymflow.initial_metric(e.xi0, g)
            nb = hymflow.hym_norm(Hxi, hymflow.hym_tensor(Hxi, e))
            absz = np.abs(np.broadcast_to(g.Z, g.shape))[g.interior]
            vals.append(float(np.max(nb / (1 - absz))))
            g = g.refined()
        print(name, vals)
        res[name] = vals
    save(cfg.out, res)
    return res


if __name__ == "__main__":
    main(parse(Config))
