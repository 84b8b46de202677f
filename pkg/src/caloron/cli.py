"""Batch front end: run, verify, export, sweep.

Exit codes: 0 converged / all checks passed, 1 invalid input or unreadable
checkpoint, 2 flow not converged, 3 a verified invariant failed.
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import geometry, holomap, hymflow, instanton, looporbit
from . import matrixcore as mc

log = logging.getLogger("caloron")

EXIT_OK, EXIT_INVALID, EXIT_NOT_CONVERGED, EXIT_VERIFY = 0, 1, 2, 3
EXPORT_FORMATS = ("csv", "json", "vtk", "caloron")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    map: dict
    grid: dict = field(default_factory=dict)
    flow: dict = field(default_factory=dict)
    exhaustion: dict = field(default_factory=dict)
    observables: dict = field(default_factory=dict)
    output: str = "out"
    seed: int = 0

    DEFAULT_OBSERVABLES = {"charge": True, "energy": True, "asd": True, "caloron": False}

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict) or "map" not in d:
            raise ConfigError("config needs a 'map' section")
        unknown = set(d) - {"map", "grid", "flow", "exhaustion", "observables", "output", "seed"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(map=d["map"], grid=d.get("grid") or {}, flow=d.get("flow") or {},
                  exhaustion=d.get("exhaustion") or {}, observables=d.get("observables") or {},
                  output=str(d.get("output", "out")), seed=int(d.get("seed", 0)))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path, overrides=()) -> "RunConfig":
        try:
            d = yaml.safe_load(Path(path).read_text())
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        for item in overrides:
            apply_override(d, item)
        cfg = cls.from_dict(d)
        base = Path(path).parent
        if not Path(cfg.output).is_absolute():
            cfg.output = str(base / cfg.output)
        if isinstance(cfg.map, str) and not Path(cfg.map).is_absolute():
            cfg.map = str(base / cfg.map)
        return cfg

    # resolved objects
    def grid_obj(self) -> geometry.ProductGrid:
        try:
            return geometry.ProductGrid.from_json(self.grid)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad grid: {exc}") from None

    def flow_obj(self) -> hymflow.FlowConfig:
        try:
            f = hymflow.FlowConfig(**self.flow)
        except TypeError as exc:
            raise ConfigError(f"bad flow section: {exc}") from None
        if f.dt is not None and not f.dt > 0:
            raise ConfigError("dt must be positive")
        if not (f.t_max > 0 and f.tol_B > 0 and f.check_every >= 1 and f.cfl > 0):
            raise ConfigError("t_max, tol_B, cfl must be positive and check_every >= 1")
        return f

    def map_obj(self) -> holomap.EtaField:
        try:
            return holomap.load_map(self.map)
        except (holomap.MapError, looporbit.OrbitError, OSError, ValueError) as exc:
            raise ConfigError(f"bad map: {exc}") from None

    def schedule(self) -> list:
        sched = self.exhaustion.get("schedule") or []
        out = []
        for pair in sched:
            if len(pair) != 2:
                raise ConfigError("schedule entries are [eps, delta] pairs")
            a, b = (geometry.eval_scalar(x) if isinstance(x, str) else float(x) for x in pair)
            if not 0 < a < b < 1:
                raise ConfigError(f"schedule entry needs 0 < eps < delta < 1, got {pair}")
            out.append((a, b))
        return out

    def obs(self) -> dict:
        o = dict(self.DEFAULT_OBSERVABLES)
        o.update(self.observables)
        return o

    def validate(self) -> None:
        g = self.grid_obj()
        self.flow_obj()
        e = self.map_obj()
        e.check_finite(g.W[:, :, 0, 0])
        self.schedule()

    def canonical(self) -> dict:
        """Config content that determines results (the output path excluded)."""
        d = asdict(self)
        d.pop("output")
        d["grid"] = self.grid_obj().to_json()
        d["flow"] = self.flow_obj().to_json()
        d["observables"] = self.obs()
        return d

    def hash(self) -> str:
        text = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(text.encode()).hexdigest()


def apply_override(d: dict, item: str) -> None:
    """key.sub=value with a YAML-parsed scalar value."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not key=value")
    key, val = item.split("=", 1)
    parts = key.strip().split(".")
    cur = d
    for p in parts[:-1]:
        cur = cur.setdefault(p, {})
        if not isinstance(cur, dict):
            raise ConfigError(f"override {item!r} does not address a mapping")
    v = yaml.safe_load(val)
    if isinstance(v, (dict, list)):
        raise ConfigError("overrides set scalar fields only")
    cur[parts[-1]] = v


def _threads() -> int:
    """Worker processes for sweeps (CALORON_THREADS, default 1)."""
    try:
        return max(1, int(os.environ.get("CALORON_THREADS", "1")))
    except ValueError:
        return 1


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n"


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.bool_):
        return bool(x)
    return str(x)


# ---------------------------------------------------------------------------
# observables

def observables(H: hymflow.HermitianMetricField, e: holomap.EtaField, flags: dict) -> dict:
    out: dict = {}
    deg, deg_err = holomap.degree(e)
    out["degree"] = {"value": deg, "error": deg_err}
    if flags.get("charge"):
        k, err = instanton.charge(e)
        out["charge"] = {"value": k, "error": err,
                         "domain": instanton.charge_on_domain(e, H.grid)}
    if flags.get("asd") or flags.get("energy") or flags.get("caloron"):
        A = instanton.connection_from_pair(H, e)
        F = instanton.curvature(A)
        if flags.get("asd"):
            out["asd_residual"] = instanton.asd_residual(F, margin=2)
        if flags.get("energy"):
            out["energy"] = instanton.energy(F, e, A)
        if flags.get("caloron"):
            c = instanton.caloron_fields(H, e, A=A)
            try:
                out["decay"] = instanton.decay_report(c)
            except instanton.InstantonError as exc:
                out["decay"] = {"error": str(exc)}
    return out


def _report_header(cfg: RunConfig, g: geometry.ProductGrid) -> dict:
    from . import __version__
    return {"config_hash": cfg.hash(), "grid": g.to_json(), "version": __version__,
            "seed": cfg.seed}


# ---------------------------------------------------------------------------
# commands

def cmd_run(config, overrides=(), resume: str | None = None) -> int:
    try:
        cfg = config if isinstance(config, RunConfig) else RunConfig.load(config, overrides)
        e, g, fcfg = cfg.map_obj(), cfg.grid_obj(), cfg.flow_obj()
        sched = cfg.schedule()
        H0, t0 = None, 0.0
        if resume:
            field_, _ = hymflow.load_checkpoint(resume)
            if field_.grid != g:
                raise ConfigError("checkpoint grid differs from the configured grid")
            H0, t0 = field_.values, field_.t
    except (ConfigError, hymflow.FlowError) as exc:
        log.error("%s", exc)
        return EXIT_INVALID
    np.random.seed(cfg.seed)
    out = Path(cfg.output)
    header = _report_header(cfg, g)
    try:
        H, diag = hymflow.run_flow(e, g, fcfg, H0=H0, t0=t0)
    except hymflow.FlowDivergence as exc:
        log.error("flow diverged: %s", exc)
        if exc.state is not None:
            hymflow.save_checkpoint(out / "divergence_state.npz", exc.state,
                                    {"config": cfg.canonical(), **header})
        if exc.diagnostics is not None:
            _write(out / "diagnostics.csv", _diag_csv(exc.diagnostics, header))
        return EXIT_NOT_CONVERGED
    _write(out / "diagnostics.csv", _diag_csv(diag, header))
    hymflow.save_checkpoint(out / "checkpoint.npz", H, {"config": cfg.canonical(), **header})
    report = {**header, "flow": diag.summary(), "observables": observables(H, e, cfg.obs())}
    if sched:
        try:
            _, rep = hymflow.exhaust(e, sched, g, fcfg)
            report["exhaustion"] = rep.to_json()
        except hymflow.FlowError as exc:
            report["exhaustion"] = {"error": str(exc)}
    _write(out / "observables.json", _json(report))
    log.info("run finished: converged=%s steps=%d sup|B|=%.3g", diag.converged, diag.steps,
             report["flow"]["sup_B"])
    return EXIT_OK if diag.converged else EXIT_NOT_CONVERGED


def _diag_csv(diag: hymflow.FlowDiagnostics, header: dict) -> str:
    head = f"# config_hash={header['config_hash']} grid={json.dumps(header['grid'], sort_keys=True)}\n"
    return head + diag.to_csv()


def _check(rows, name, value, threshold, ok) -> None:
    rows.append({"check": name, "value": float(value), "threshold": float(threshold),
                 "passed": bool(ok)})


def verify_suite(cfg: RunConfig, checkpoint: str | None = None, run: bool = True) -> list:
    """Invariant checks on the configured instance; returns table rows."""
    rows: list = []
    e, g, fcfg = cfg.map_obj(), cfg.grid_obj(), cfg.flow_obj()
    rng = np.random.default_rng(cfg.seed)
    # boundary metric is stationary without eta
    zero = holomap.zero_field(e.dim, e.a, e.xi0.mu)
    Hxi = hymflow.initial_metric(e.xi0, g)
    B0 = hymflow.hym_tensor(Hxi, zero)
    s0 = float(np.max(np.abs(B0)))
    _check(rows, "stationary_boundary_metric", s0, 1e-10, s0 <= 1e-10)
    # holonomy of the constant loop
    M = looporbit.holonomy(e.xi0)
    ref = np.diag(np.exp(2j * np.pi * e.a / e.xi0.mu))
    dh = float(np.max(np.abs(M - ref)))
    _check(rows, "holonomy_constant_loop", dh, 1e-8, dh <= 1e-8)
    # charge equals degree
    if not e.is_zero:
        k, ke = instanton.charge(e)
        d, de = holomap.degree(e)
        _check(rows, "charge_equals_degree", abs(k - d), 2e-2, abs(k - d) <= 2e-2)
    # self-adjointness of B at the initial metric
    B = hymflow.hym_tensor(Hxi, e)
    I = (slice(None), slice(None)) + g.interior
    sa = float(np.max(np.abs(B[I] - mc.bh_adjoint(Hxi.values[I], B[I]))))
    scale = max(1.0, float(np.max(np.abs(B))))
    _check(rows, "B_self_adjoint_at_H_xi", sa / scale, 1e-8, sa / scale <= 1e-8)
    # conformal pullback identity at random points
    pull = geometry.pullback_defect(rng, e.xi0.mu, 20)
    _check(rows, "conformal_pullback", pull, 1e-10, pull <= 1e-10)
    if checkpoint:
        field_, _ = hymflow.load_checkpoint(checkpoint)   # FlowError -> exit 1
        bdry = g.boundary_mask if field_.grid == g else None
        if bdry is not None:
            hx = hymflow.initial_metric(e.xi0, g).values
            db = float(np.max(np.abs(field_.values[:, :, bdry] - hx[:, :, bdry])))
            _check(rows, "checkpoint_dirichlet_data", db, 0.0, db == 0.0)
    if run:
        try:
            H, diag = hymflow.run_flow(e, g, fcfg)
        except hymflow.FlowDivergence as exc:
            _check(rows, "flow_no_divergence", 1.0, 0.0, False)
            return rows
        _check(rows, "flow_converged", diag.rows[-1]["sup_B"], fcfg.tol_B, diag.converged)
        _check(rows, "sup_B_non_increasing", diag.max_B_increase, 1e-8, diag.max_B_increase <= 1e-8)
        _check(rows, "sigma_drift_non_increasing", diag.max_sigma_increase, 1e-8,
               diag.max_sigma_increase <= 1e-8)
        bd = float(np.max(np.abs(H.values[:, :, g.boundary_mask]
                                 - Hxi.values[:, :, g.boundary_mask])))
        _check(rows, "dirichlet_data_exact", bd, 0.0, bd == 0.0)
        try:
            mc.bcheck_pd(H.values)
            pd = True
        except mc.PositivityError:
            pd = False
        _check(rows, "positive_definite", 0.0 if pd else 1.0, 0.0, pd)
    return rows


def cmd_verify(config, overrides=(), checkpoint: str | None = None, run: bool = True,
               out=None) -> int:
    out = out or sys.stdout
    try:
        cfg = config if isinstance(config, RunConfig) else RunConfig.load(config, overrides)
        rows = verify_suite(cfg, checkpoint, run)
    except (ConfigError, hymflow.FlowError) as exc:
        log.error("%s", exc)
        return EXIT_INVALID
    out.write(_json({"config_hash": cfg.hash(), "checks": rows}))
    for r in rows:
        out.write(f"{'PASS' if r['passed'] else 'FAIL'} {r['check']}: {r['value']:.3e} "
                  f"(threshold {r['threshold']:.1e})\n")
    return EXIT_OK if all(r["passed"] for r in rows) else EXIT_VERIFY


# ---------------------------------------------------------------------------
# export / import

def export_field(checkpoint, fmt: str, dest) -> list:
    """Write the checkpoint in the given format; returns the written paths."""
    if fmt not in EXPORT_FORMATS:
        raise ConfigError(f"unknown format {fmt!r}; choose from {EXPORT_FORMATS}")
    H, meta = hymflow.load_checkpoint(checkpoint)
    dest = Path(dest)
    g = H.grid
    if fmt == "csv":
        path = dest.with_suffix(".csv")
        _write(path, field_to_csv(H))
    elif fmt == "json":
        path = dest.with_suffix(".json")
        v = H.values
        _write(path, _json({"grid": g.to_json(), "t": repr(H.t), "n": H.n,
                            "re": [repr(x) for x in v.real.ravel()],
                            "im": [repr(x) for x in v.imag.ravel()]}))
    elif fmt == "vtk":
        path = dest.with_suffix(".vtk")
        _write(path, _vtk(H, meta))
    else:
        path = dest.with_suffix(".caloron.csv")
        _write(path, _caloron_csv(H, meta))
    return [path]


def field_to_csv(H: hymflow.HermitianMetricField) -> str:
    g, v = H.grid, H.values
    n = H.n
    buf = io.StringIO()
    buf.write("# " + json.dumps({"grid": g.to_json(), "t": repr(H.t), "n": n}, sort_keys=True) + "\n")
    cols = ["ix", "iy", "iu", "iphi", "x", "y", "u", "phi"]
    cols += [f"{p}{i}{j}" for i in range(n) for j in range(n) for p in ("re", "im")]
    buf.write(",".join(cols) + "\n")
    for idx in np.ndindex(*g.shape):
        ix, iy, iu, ip = idx
        row = [str(ix), str(iy), str(iu), str(ip), "%.17g" % g.x[ix], "%.17g" % g.y[iy],
               "%.17g" % g.u[iu], "%.17g" % g.phi[ip]]
        for i in range(n):
            for j in range(n):
                z = v[(i, j) + idx]
                row += ["%.17g" % z.real, "%.17g" % z.imag]
        buf.write(",".join(row) + "\n")
    return buf.getvalue()


def field_from_csv(path) -> hymflow.HermitianMetricField:
    try:
        with open(path) as fh:
            head = json.loads(fh.readline()[1:])
            g = geometry.ProductGrid.from_json(head["grid"])
            n = int(head["n"])
            reader = csv.DictReader(fh)
            v = np.empty((n, n) + g.shape, dtype=complex)
            for row in reader:
                idx = (int(row["ix"]), int(row["iy"]), int(row["iu"]), int(row["iphi"]))
                for i in range(n):
                    for j in range(n):
                        v[(i, j) + idx] = complex(float(row[f"re{i}{j}"]), float(row[f"im{i}{j}"]))
        return hymflow.HermitianMetricField(g, v, float(head["t"]))
    except (OSError, KeyError, ValueError) as exc:
        raise hymflow.FlowError(f"unreadable field file {path}: {exc}") from None


def _vtk(H, meta) -> str:
    """Legacy structured grid in caloron coordinates x in R^3, one scalar per phi slice."""
    g = H.grid
    mu = float(meta.get("config", {}).get("map", {}).get("mu", 1.0)) if isinstance(
        meta.get("config", {}).get("map"), dict) else 1.0
    W = g.W[:, :, 0, 0]
    n3 = geometry.sphere_point(W)
    r = -g.u / mu
    pts = (n3[:, :, :, None] * r[None, None, None, :])       # (3, nx, ny, nu)
    buf = io.StringIO()
    buf.write("# vtk DataFile Version 3.0\ncaloron metric field\nASCII\nDATASET STRUCTURED_GRID\n")
    buf.write(f"DIMENSIONS {g.nx} {g.ny} {g.nu}\nPOINTS {g.nx * g.ny * g.nu} double\n")
    for k in range(g.nu):
        for j in range(g.ny):
            for i in range(g.nx):
                buf.write("%.17g %.17g %.17g\n" % tuple(pts[:, i, j, k]))
    buf.write(f"POINT_DATA {g.nx * g.ny * g.nu}\n")
    tr = mc.btrace(H.values).real
    for p in range(g.nphi):
        buf.write(f"SCALARS trace_H_phi{p} double 1\nLOOKUP_TABLE default\n")
        for k in range(g.nu):
            for j in range(g.ny):
                for i in range(g.nx):
                    buf.write("%.17g\n" % tr[i, j, k, p])
    return buf.getvalue()


def _caloron_csv(H, meta) -> str:
    """Nodes in caloron coordinates (theta, x1, x2, x3, r); Phi entries when
    the checkpoint carries its map."""
    g = H.grid
    mapspec = meta.get("config", {}).get("map")
    Phi = None
    mu = 1.0
    if mapspec is not None:
        e = holomap.load_map(mapspec)
        mu = e.xi0.mu
        Phi = instanton.caloron_fields(H, e).Phi
    theta, x = geometry.to_caloron_coords(g.W, g.Z, mu)
    theta = np.broadcast_to(theta, g.shape)
    x = np.broadcast_to(x, (3,) + g.shape)
    r = np.linalg.norm(x, axis=0)
    n = H.n
    cols = ["ix", "iy", "iu", "iphi", "theta", "x1", "x2", "x3", "r"]
    if Phi is not None:
        cols += [f"Phi_{p}{i}{j}" for i in range(n) for j in range(n) for p in ("re", "im")]
    buf = io.StringIO()
    buf.write(",".join(cols) + "\n")
    for idx in np.ndindex(*g.shape):
        row = [str(i) for i in idx] + ["%.17g" % theta[idx]] + ["%.17g" % x[(c,) + idx] for c in range(3)]
        row.append("%.17g" % r[idx])
        if Phi is not None:
            for i in range(n):
                for j in range(n):
                    z = Phi[(i, j) + idx]
                    row += ["%.17g" % z.real, "%.17g" % z.imag]
        buf.write(",".join(row) + "\n")
    return buf.getvalue()


def cmd_export(checkpoint, fmt: str, dest=None) -> int:
    try:
        dest = dest or Path(checkpoint).with_suffix("")
        paths = export_field(checkpoint, fmt, dest)
    except (ConfigError, hymflow.FlowError, holomap.MapError) as exc:
        log.error("%s", exc)
        return EXIT_INVALID
    for p in paths:
        log.info("wrote %s", p)
    return EXIT_OK


def cmd_import(src, dest) -> int:
    """CSV export back to a checkpoint."""
    try:
        H = field_from_csv(src)
        mc.bcheck_pd(H.values)
    except (hymflow.FlowError, mc.PositivityError) as exc:
        log.error("%s", exc)
        return EXIT_INVALID
    hymflow.save_checkpoint(dest, H)
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep

def _sweep_one(args):
    d, out = args
    cfg = RunConfig.from_dict(d)
    cfg.output = out
    return cmd_run(cfg)


def cmd_sweep(config, key: str, values, overrides=(), workers: int | None = None) -> int:
    """Independent runs with one config field varied; non-convergence does not stop the sweep."""
    try:
        base = yaml.safe_load(Path(config).read_text())
        for item in overrides:
            apply_override(base, item)
        root = Path(config).parent / base.get("output", "out")
        if isinstance(base.get("map"), str) and not Path(base["map"]).is_absolute():
            base["map"] = str(Path(config).parent / base["map"])
        jobs = []
        for i, v in enumerate(values):
            d = copy.deepcopy(base)
            apply_override(d, f"{key}={v}")
            RunConfig.from_dict(d)
            jobs.append((d, str(root / f"sweep_{i:03d}")))
    except (ConfigError, OSError, yaml.YAMLError) as exc:
        log.error("%s", exc)
        return EXIT_INVALID
    workers = workers or _threads()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            codes = list(pool.map(_sweep_one, jobs))
    else:
        codes = [_sweep_one(j) for j in jobs]
    lines = ["index,value,exit_code"] + [f"{i},{v},{c}" for i, (v, c) in enumerate(zip(values, codes))]
    _write(root / "sweep.csv", "\n".join(lines) + "\n")
    if any(c == EXIT_INVALID for c in codes):
        return EXIT_INVALID
    return EXIT_OK if all(c == EXIT_OK for c in codes) else EXIT_NOT_CONVERGED


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="caloron", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="flow, observables, reports")
    r.add_argument("config")
    r.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    r.add_argument("--resume", help="checkpoint to continue from")
    v = sub.add_parser("verify", help="invariant checks, pass/fail table")
    v.add_argument("config")
    v.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    v.add_argument("--checkpoint")
    v.add_argument("--no-run", action="store_true", help="skip the flow monitors")
    x = sub.add_parser("export", help="checkpoint to csv/json/vtk/caloron")
    x.add_argument("checkpoint")
    x.add_argument("--format", default="csv", choices=EXPORT_FORMATS)
    x.add_argument("--out")
    i = sub.add_parser("import", help="csv export back to a checkpoint")
    i.add_argument("csv")
    i.add_argument("checkpoint")
    s = sub.add_parser("sweep", help="vary one config field over values")
    s.add_argument("config")
    s.add_argument("key")
    s.add_argument("values", nargs="+")
    s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    s.add_argument("--workers", type=int)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.cmd == "run":
        return cmd_run(args.config, args.set, args.resume)
    if args.cmd == "verify":
        return cmd_verify(args.config, args.set, args.checkpoint, not args.no_run)
    if args.cmd == "export":
        return cmd_export(args.checkpoint, args.format, args.out)
    if args.cmd == "import":
        return cmd_import(args.csv, args.checkpoint)
    return cmd_sweep(args.config, args.key, args.values, args.set, args.workers)


if __name__ == "__main__":
    sys.exit(main())
