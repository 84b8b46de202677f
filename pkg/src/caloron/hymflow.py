"""Hermitian-Yang-Mills tensor and the Dirichlet heat flow H^{-1} dH/dt = B(H, eta).

Matrix fields are component-major, shape (n, n, nx, ny, nu, nphi). In
log-polar coordinates z = e^{u + i phi} the tensor reads

    B = u^2 {d_u A_u + d_phi A_phi + i[A_u, A_phi]}
      + (1+|w|^2)^2 {(d_x A_x + d_y A_y + i[A_x, A_y]) / 4
                     - [M, A_wbar] - H^{-1}(d_w eta)^* H - d_w eta + [eta, A_w - M]}

with A_q = H^{-1} d_q H, A_w = (A_x - i A_y)/2, A_wbar = (A_x + i A_y)/2 and
M = H^{-1} eta^* H. The divergence terms are discretised in flux form on
cell edges, which makes B(H_xi, 0) vanish to roundoff on any grid.
"""
from __future__ import annotations

import hashlib
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from . import matrixcore as mc
from .geometry import ProductGrid
from .holomap import EtaField
from .looporbit import LoopAlgebraElement


class FlowError(RuntimeError):
    pass


class FlowDivergence(FlowError):
    def __init__(self, msg, state=None, diagnostics=None):
        super().__init__(msg)
        self.state = state
        self.diagnostics = diagnostics


@dataclass
class HermitianMetricField:
    grid: ProductGrid
    values: np.ndarray
    t: float = 0.0

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def copy(self) -> "HermitianMetricField":
        return HermitianMetricField(self.grid, self.values.copy(), self.t)


@dataclass
class FlowConfig:
    dt: float | None = None      # None: cfl / lambda_max
    cfl: float = 0.8
    t_max: float = 60.0
    tol_B: float = 1e-6
    check_every: int = 50
    max_steps: int | None = None
    slack: float = 1e-8

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class FlowDiagnostics:
    rows: list = field(default_factory=list)
    converged: bool = False
    steps: int = 0
    dt: float = 0.0
    max_B_increase: float = 0.0
    max_sigma_increase: float = 0.0
    max_dist_ratio: float = 0.0
    B_history: list = field(default_factory=list)

    COLUMNS = ("step", "t", "sup_B", "energy_B", "sigma_drift", "dist_ratio")

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(self.COLUMNS) + "\n")
        for r in self.rows:
            buf.write(",".join(repr(float(r[c])) if c != "step" else str(r[c]) for c in self.COLUMNS) + "\n")
        return buf.getvalue()

    def summary(self) -> dict:
        last = self.rows[-1] if self.rows else {}
        return {"converged": self.converged, "steps": self.steps, "dt": self.dt,
                "t": last.get("t", 0.0), "sup_B": last.get("sup_B", 0.0),
                "max_B_increase": self.max_B_increase,
                "max_sigma_increase": self.max_sigma_increase,
                "max_dist_ratio": self.max_dist_ratio}


# ---------------------------------------------------------------------------

def initial_metric(xi0: LoopAlgebraElement, g: ProductGrid) -> HermitianMetricField:
    """H_xi = diag(|z|^{2 a_j}) = diag(e^{2 a_j u})."""
    a = xi0.eigenvalues()
    n = len(a)
    H = np.zeros((n, n) + g.shape, dtype=complex)
    for j in range(n):
        H[j, j] = np.broadcast_to(np.exp(2 * a[j] * g.U), g.shape)
    return HermitianMetricField(g, H, 0.0)


def cfl_lambda(g: ProductGrid) -> float:
    """Largest diagonal coefficient of the discrete linearised operator.

    Forward steps keep the stencil positive (and hence a discrete maximum
    principle) for dt <= 1 / cfl_lambda.
    """
    def diag(axis):
        e = g.edges(axis)
        return 2.0 / (e[1:] * e[:-1])
    lw = g.inner(g.conf_w) / 4 * (diag(0)[:, None, None, None] + diag(1)[None, :, None, None])
    lz = g.inner(g.conf_z) * (diag(2)[None, None, :, None] + 2 / g.hphi ** 2)
    return float(np.max(lw + lz))


def stable_dt(g: ProductGrid, cfl: float = 0.8) -> float:
    return cfl / cfl_lambda(g)


class FlowOperator:
    """Precomputed data for evaluating B(H, eta) and stepping on one grid.

    For n = 2 the compiled kernels are used unless fast=False; the numpy
    path is the reference implementation and handles every n.
    """

    def __init__(self, e: EtaField, g: ProductGrid, fast: bool = True):
        self.e, self.g = e, g
        self.n = e.dim
        e.check_finite(g.W[:, :, 0, 0])
        I = g.interior
        self.Hxi = initial_metric(e.xi0, g).values
        self.eta_zero = e.is_zero
        if not self.eta_zero:
            W, Z = g.W[1:-1, 1:-1], g.Z[:, :, 1:-1]
            self.eta = e.field(W, Z)
            self.deta = e.field(W, Z, "dw")
            self.deta_adj = mc.badj(self.deta)
        self.cz = g.inner(g.conf_z)
        self.cw = g.inner(g.conf_w)
        self.geo = []
        for axis in range(3):
            d = g.edges(axis)
            sh = lambda v: v.reshape(g.axis_shape(axis, -1))
            self.geo.append((sh(d), sh(d[:-1]), sh(d[1:]), sh(g.duals(axis))))
        self.vol = g.inner(g.volume)
        self.interior = I
        self.kernel = None
        if fast and self.n == 2 and min(g.nx, g.ny, g.nu) >= 3:
            from ._kernels import TensorN2
            self.kernel = TensorN2(g.shape, g.edges(0), g.edges(1), g.edges(2), g.hphi,
                                   self.cz.ravel(), self.cw[:, :, 0, 0],
                                   None if self.eta_zero else self.eta,
                                   None if self.eta_zero else self.deta)

    # -- edge fluxes
    def _axis(self, H, axis):
        """Divergence and node value of A_q = H^{-1} d_q H along a non-periodic axis."""
        sl = [slice(None), slice(None), slice(1, -1), slice(1, -1), slice(1, -1), slice(None)]
        sl[2 + axis] = slice(None)
        slab = H[tuple(sl)]
        lo = [slice(None)] * 6
        hi = [slice(None)] * 6
        lo[2 + axis], hi[2 + axis] = slice(None, -1), slice(1, None)
        Ha, Hb = slab[tuple(lo)], slab[tuple(hi)]
        d, dm, dp, dual = self.geo[axis]
        if axis == 2:
            # log difference: exact on the exponential profile of H_xi
            E = mc.blog_rel(Ha, Hb) / d
        else:
            E = mc.bmul(mc.binv(0.5 * (Ha + Hb)), Hb - Ha) / d
        Em, Ep = E[tuple(lo)], E[tuple(hi)]
        div = (Ep - Em) / dual
        node = (dm * Ep + dp * Em) / (dm + dp)
        return div, node

    def _phi(self, Hc):
        Hn = np.roll(Hc, -1, axis=5)
        E = mc.bmul(mc.binv(0.5 * (Hc + Hn)), Hn - Hc) / self.g.hphi
        Em = np.roll(E, 1, axis=5)
        return (E - Em) / self.g.hphi, 0.5 * (E + Em)

    def tensor(self, H: np.ndarray) -> np.ndarray:
        """B on interior nodes, shape (n, n, nx-2, ny-2, nu-2, nphi)."""
        if self.kernel is not None:
            return self.kernel.tensor(np.ascontiguousarray(H))
        return self.tensor_reference(H)

    def tensor_reference(self, H: np.ndarray) -> np.ndarray:
        Hc = H[(slice(None), slice(None)) + self.interior]
        dx, Ax = self._axis(H, 0)
        dy, Ay = self._axis(H, 1)
        du, Au = self._axis(H, 2)
        dp, Ap = self._phi(Hc)
        Bz = self.cz * (du + dp + 1j * mc.bcomm(Au, Ap))
        Bw = 0.25 * (dx + dy + 1j * mc.bcomm(Ax, Ay))
        if not self.eta_zero:
            Hinv = mc.binv(Hc)
            eta = self.eta
            M = mc.bmul(mc.bmul(Hinv, mc.badj(eta)), Hc)
            Aw = 0.5 * (Ax - 1j * Ay)
            Awb = 0.5 * (Ax + 1j * Ay)
            Bw = (Bw - mc.bcomm(M, Awb) - mc.bmul(mc.bmul(Hinv, self.deta_adj), Hc)
                  - self.deta + mc.bcomm(eta, Aw - M))
        return Bz + self.cw * Bw

    def norm2(self, Hc: np.ndarray, B: np.ndarray) -> np.ndarray:
        """|B|_H^2 = tr(B_s^2), B_s the H-self-adjoint part."""
        S = mc.bherm(mc.bmul(Hc, B))
        Bs = mc.bmul(mc.binv(Hc), S)
        return np.maximum(mc.btrace(mc.bmul(Bs, Bs)).real, 0.0)

    def step(self, H: np.ndarray, B: np.ndarray, dt: float) -> np.ndarray:
        return self.step_with_norm(H, B, dt)[0]

    def step_with_norm(self, H: np.ndarray, B: np.ndarray, dt: float):
        """(L exp(dt L^{-1} S L^{-*}) L^* at interior nodes, |B|_H^2 at the old H)."""
        out = H.copy()
        if self.kernel is not None:
            from ._kernels import step_n2
            n2 = np.empty(B.shape[2:])
            step_n2(np.ascontiguousarray(H), np.ascontiguousarray(B), float(dt), out, n2)
            return out, n2
        idx = (slice(None), slice(None)) + self.interior
        out[idx] = mc.bherm_exp_step(H[idx], B, dt)
        return out, self.norm2(H[idx], B)


def hym_tensor(H: HermitianMetricField, e: EtaField, op: FlowOperator | None = None) -> np.ndarray:
    """B(H, eta) on every node; boundary nodes carry zeros."""
    op = op or FlowOperator(e, H.grid)
    B = np.zeros_like(H.values)
    B[(slice(None), slice(None)) + H.grid.interior] = op.tensor(H.values)
    return B


def hym_norm(H: HermitianMetricField, B: np.ndarray) -> np.ndarray:
    """Pointwise |B|_H on interior nodes."""
    I = (slice(None), slice(None)) + H.grid.interior
    Hc = H.values[I]
    S = mc.bherm(mc.bmul(Hc, B[I]))
    Bs = mc.bmul(mc.binv(Hc), S)
    return np.sqrt(np.maximum(mc.btrace(mc.bmul(Bs, Bs)).real, 0.0))


def flow_step(H: HermitianMetricField, e: EtaField, dt: float,
              op: FlowOperator | None = None) -> HermitianMetricField:
    """H exp(dt B) at interior nodes, boundary reset to H_xi."""
    op = op or FlowOperator(e, H.grid)
    B = op.tensor(H.values)
    new = op.step(H.values, B, dt)
    new[:, :, op.g.boundary_mask] = op.Hxi[:, :, op.g.boundary_mask]
    mc.bcheck_pd(new)
    return HermitianMetricField(H.grid, new, H.t + dt)


def distance_ratio(op: FlowOperator, H: np.ndarray) -> float:
    """max over interior nodes of d(H, H_xi) / ln(1 - ln|z|)."""
    I = (slice(None), slice(None)) + op.interior
    d = mc.bdist(op.Hxi[I], H[I])
    return float(np.max(d / np.log(1 - op.g.inner(op.g.U))))


def run_flow(e: EtaField, g: ProductGrid, cfg: FlowConfig | None = None,
             H0: np.ndarray | None = None, callback=None, t0: float = 0.0):
    """Integrate until sup|B| < tol_B or t_max; returns (field, diagnostics).

    H0 (e.g. a checkpoint) replaces H_xi as the initial state, t0 its time.
    """
    cfg = cfg or FlowConfig()
    op = FlowOperator(e, g)
    dt = cfg.dt or stable_dt(g, cfg.cfl)
    diag = FlowDiagnostics(dt=dt)
    H = (op.Hxi if H0 is None else np.asarray(H0, dtype=complex)).copy()
    bmask = g.boundary_mask
    H[:, :, bmask] = op.Hxi[:, :, bmask]
    mc.bcheck_pd(H)
    I = (slice(None), slice(None)) + op.interior
    t, step = float(t0), 0
    prev_B = np.inf
    prev_snap = None
    prev_sigma = None
    grow = 0
    last_check_B = np.inf
    max_steps = cfg.max_steps or int(np.ceil(max(cfg.t_max - t0, 0.0) / dt)) + 1

    def check(Bsup, B):
        nonlocal prev_snap, prev_sigma, grow, last_check_B
        energy = float(np.sum(op.norm2(H[I], B) * op.vol))
        if prev_snap is None:
            drift = 0.0
        else:
            drift = float(np.max(mc.bsigma(prev_snap, H[I])))
            if prev_sigma is not None:
                diag.max_sigma_increase = max(diag.max_sigma_increase, drift - prev_sigma)
            prev_sigma = drift
        prev_snap = H[I].copy()
        ratio = distance_ratio(op, H)
        diag.max_dist_ratio = max(diag.max_dist_ratio, ratio)
        diag.rows.append({"step": step, "t": t, "sup_B": Bsup, "energy_B": energy,
                          "sigma_drift": drift, "dist_ratio": ratio})
        grow = grow + 1 if Bsup > last_check_B * (1 + cfg.slack) + cfg.slack else 0
        last_check_B = Bsup
        if grow >= 3:
            raise FlowDivergence(f"sup|B| grew for 3 consecutive checks at t={t:.4g}",
                                 HermitianMetricField(g, H.copy(), t), diag)
        if callback is not None:
            callback(step, t, H, diag)

    while True:
        B = op.tensor(H)
        Hnext, n2 = op.step_with_norm(H, B, dt)
        Bsup = float(np.sqrt(np.max(n2))) if B.size else 0.0
        diag.B_history.append(Bsup)
        if np.isfinite(prev_B):
            diag.max_B_increase = max(diag.max_B_increase, Bsup - prev_B)
        prev_B = Bsup
        done = Bsup < cfg.tol_B
        if step % cfg.check_every == 0 or done or step >= max_steps or t >= cfg.t_max:
            check(Bsup, B)
        if done:
            diag.converged = True
            break
        if step >= max_steps or t >= cfg.t_max - 1e-12:
            break
        H = Hnext
        H[:, :, bmask] = op.Hxi[:, :, bmask]
        try:
            mc.bcheck_pd(H[I])
        except mc.PositivityError as exc:
            raise FlowDivergence(str(exc), HermitianMetricField(g, H, t), diag) from None
        t += dt
        step += 1
    diag.steps = step
    return HermitianMetricField(g, H, t), diag


# ---------------------------------------------------------------------------
# exhaustion eps -> 0, delta -> 1

def schedule_grid(base: ProductGrid, eps: float, delta: float) -> ProductGrid:
    """Same w and phi nodes as base, u-spacing (in computational units) kept."""
    def span(a, b):
        if base.stretch:
            return np.log(-np.log(a)) - np.log(-np.log(b))
        return np.log(b) - np.log(a)
    h = span(base.eps, base.delta) / (base.nu - 1)
    nu = max(4, int(round(span(eps, delta) / h)) + 1)
    return base.with_(eps=float(eps), delta=float(delta), nu=nu)


def interpolate_u(H: HermitianMetricField, g: ProductGrid) -> np.ndarray:
    """Cubic-spline transfer of H along u onto the u-nodes of g (same w, phi nodes),
    in the computational coordinate -ln(-u) when stretched."""
    src = H.grid
    if (src.nx, src.ny, src.nphi, src.R_w, src.stretch) != (g.nx, g.ny, g.nphi, g.R_w, g.stretch):
        raise FlowError("grids differ in the w or phi directions")
    if g.u[0] < src.u[0] - 1e-14 or g.u[-1] > src.u[-1] + 1e-14:
        raise FlowError("target u-range is not inside the source domain")
    coord = (lambda u: -np.log(-u)) if src.stretch else (lambda u: u)
    spline = CubicSpline(coord(src.u), H.values, axis=4)
    out = spline(coord(g.u))
    return mc.bherm(out)


@dataclass
class ExhaustionReport:
    runs: list
    cauchy: list
    delta_side: list
    decreasing: bool

    def to_json(self) -> dict:
        return asdict(self)


def exhaust(e: EtaField, schedule, base: ProductGrid | None = None,
            cfg: FlowConfig | None = None, callback=None, keep_fields: bool = False):
    """Solve on the domains of a schedule of (eps_i, delta_i) and compare
    consecutive solutions on the smaller domain.

    Returns (list of (field, diagnostics), ExhaustionReport).
    """
    base = base or ProductGrid()
    cfg = cfg or FlowConfig()
    sched = [(float(a), float(b)) for a, b in schedule]
    for (e0, d0), (e1, d1) in zip(sched, sched[1:]):
        if not (e1 < e0 and d1 >= d0):
            raise FlowError("schedule needs eps decreasing and delta non-decreasing")
    results, runs = [], []
    for eps, delta in sched:
        g = schedule_grid(base, eps, delta)
        H, diag = run_flow(e, g, cfg)
        if not diag.converged:
            raise FlowError(f"run with eps={eps:.4g} did not converge (sup|B|={diag.rows[-1]['sup_B']:.3g})")
        results.append((H, diag))
        runs.append({"eps": eps, "delta": delta, "grid": g.to_json(), "steps": diag.steps,
                     "t": H.t, "max_dist_ratio": diag.max_dist_ratio,
                     "max_B_increase": diag.max_B_increase,
                     "max_sigma_increase": diag.max_sigma_increase})
        if callback is not None:
            callback(len(results) - 1, H, diag)
    cauchy, dside = [], []
    for i in range(len(results) - 1):
        (Hi, _), (Hn, _) = results[i], results[i + 1]
        g = Hi.grid
        Hn_i = interpolate_u(Hn, g)
        s = float(np.max(mc.bsigma(Hi.values, Hn_i)))
        cauchy.append({"eps": sched[i][0], "sup_sigma": s,
                       "ratio": s / abs(np.log(sched[i][0]))})
        Hxi = initial_metric(e.xi0, g).values
        ring = float(np.max(mc.bsigma(Hxi[:, :, :, :, -1], Hn_i[:, :, :, :, -1])))
        dside.append({"delta": sched[i][1], "sup_sigma_ring": ring,
                      "log_bound": float(np.log(1 - np.log(sched[i][1])))})
    dec = all(b["ratio"] < a["ratio"] for a, b in zip(cauchy, cauchy[1:]))
    return results, ExhaustionReport(runs, cauchy, dside, dec)


def uniqueness_probe(e: EtaField, g: ProductGrid, cfg: FlowConfig | None = None,
                     amplitude: float = 0.5, seed: int = 0) -> dict:
    """Flow from H_xi and from H_xi exp(bump) (same boundary data); compare limits."""
    cfg = cfg or FlowConfig()
    rng = np.random.default_rng(seed)
    n = e.dim
    X = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    X = amplitude * (X + X.conj().T) / np.linalg.norm(X + X.conj().T)
    def bump(q):
        t = (q - q[0]) / (q[-1] - q[0])
        return np.sin(np.pi * t)
    b = (bump(g.x)[:, None, None, None] * bump(g.y)[None, :, None, None]
         * bump(g.u)[None, None, :, None]) * (1 + 0.5 * np.cos(g.PHI))
    Hxi = initial_metric(e.xi0, g).values
    K = X.reshape(n, n, 1, 1, 1, 1) * b
    L = mc.bchol(Hxi)
    H0 = mc.bherm(mc.bmul(mc.bmul(L, mc.bexp_herm(K)), mc.badj(L)))
    H1, d1 = run_flow(e, g, cfg)
    H2, d2 = run_flow(e, g, cfg, H0=H0)
    s = float(np.max(mc.bsigma(H1.values, H2.values)))
    return {"sup_sigma": s, "initial_sup_sigma": float(np.max(mc.bsigma(Hxi, H0))),
            "converged": [d1.converged, d2.converged], "bound": 10 * cfg.tol_B,
            "passed": bool(s <= 10 * cfg.tol_B and d1.converged and d2.converged)}


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(path, field: HermitianMetricField, meta: dict | None = None) -> None:
    """npz with grid spec, time and node matrices; deterministic bytes."""
    path = Path(path)
    header = json.dumps({"grid": field.grid.to_json(), "t": field.t, "n": field.n,
                         "meta": meta or {}}, sort_keys=True)
    with open(path, "wb") as fh:
        np.savez(fh, header=np.frombuffer(header.encode(), dtype=np.uint8),
                 values=field.values)


def load_checkpoint(path) -> tuple[HermitianMetricField, dict]:
    try:
        with np.load(path, allow_pickle=False) as data:
            header = json.loads(bytes(data["header"]).decode())
            values = np.array(data["values"])
        g = ProductGrid.from_json(header["grid"])
    except Exception as exc:
        raise FlowError(f"unreadable checkpoint {path}: {exc}") from None
    if values.shape != (header["n"], header["n"]) + g.shape or not np.all(np.isfinite(values)):
        raise FlowError("checkpoint values inconsistent with its grid")
    try:
        mc.bcheck_pd(values)
    except mc.PositivityError as exc:
        raise FlowError(f"checkpoint metric not positive: {exc}") from None
    return HermitianMetricField(g, values, float(header["t"])), header.get("meta", {})


def field_hash(values: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(values).tobytes()).hexdigest()
