"""Connections from (H, eta), their curvature, and derived observables.

Frame conventions: in the holomorphic frame the connection is

    A = H^{-1} d_z H dz + eta dwbar + (H^{-1} d_w H - H^{-1} eta^* H) dw,

and the curvature components are F_ab = d_a A_b - d_b A_a + [A_a, A_b] in the
complex coordinates (w, wbar, z, zbar). Matrix norms are taken in the unitary
frame, |X|^2 = tr(X^* H X H^{-1}).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline, RegularGridInterpolator

from . import matrixcore as mc
from .geometry import ProductGrid, sphere_point
from .holomap import EtaField, MapError, QuadratureError, lattice_shift
from .hymflow import (FlowConfig, HermitianMetricField, FlowOperator, hym_tensor,
                      initial_metric, run_flow)
from .looporbit import LoopAlgebraElement

COMPONENTS = ("wbzb", "wz", "wbw", "zbz", "wzb", "wbz")


class InstantonError(ValueError):
    pass


# ---------------------------------------------------------------------------
# finite differences on the product grid

def _d(f: np.ndarray, g: ProductGrid, axis: int) -> np.ndarray:
    """Second-order derivative along x, y, u (one-sided at the ends) or phi (periodic)."""
    ax = f.ndim - 4 + axis
    if axis == 3:
        return (np.roll(f, -1, ax) - np.roll(f, 1, ax)) / (2 * g.hphi)
    return np.gradient(f, (g.x, g.y, g.u)[axis], axis=ax, edge_order=2)


def _log_du(H: np.ndarray, g: ProductGrid) -> np.ndarray:
    """H^{-1} d_u H from log differences on u-edges, then node values.

    Exact whenever H is an exponential profile in u, as H_xi is.
    """
    d = g.edges(2).reshape(1, 1, 1, -1, 1)
    E = mc.blog_rel(H[:, :, :, :, :-1], H[:, :, :, :, 1:]) / d
    mid = 0.5 * (g.u[1:] + g.u[:-1])
    out = np.empty_like(H)
    dm, dp = g.edges(2)[:-1].reshape(-1, 1), g.edges(2)[1:].reshape(-1, 1)
    out[:, :, :, :, 1:-1] = (dm * E[:, :, :, :, 1:] + dp * E[:, :, :, :, :-1]) / (dm + dp)
    # second-order extrapolation of the edge values to the end nodes
    for node, a, b in ((0, 0, 1), (-1, -1, -2)):
        t = (g.u[node] - mid[a]) / (mid[b] - mid[a])
        out[:, :, :, :, node] = E[:, :, :, :, a] + t * (E[:, :, :, :, b] - E[:, :, :, :, a])
    return out


def _dw(f, g):
    return 0.5 * (_d(f, g, 0) - 1j * _d(f, g, 1))


def _dwb(f, g):
    return 0.5 * (_d(f, g, 0) + 1j * _d(f, g, 1))


def _dz(f, g):
    return (_d(f, g, 2) - 1j * _d(f, g, 3)) / (2 * g.Z)


def _dzb(f, g):
    return (_d(f, g, 2) + 1j * _d(f, g, 3)) / (2 * np.conj(g.Z))


# ---------------------------------------------------------------------------
# connections

@dataclass
class ConnectionField:
    """Complex components of a connection on every grid node.

    ``H`` is the Hermitian metric used for norms (None means the identity,
    i.e. a unitary frame). ``analytic`` may hold exact derivatives of A_wbar
    (keys "w", "z"; d_zbar A_wbar is then taken to be zero) and the piece
    M = H^{-1} eta^* H of A_w with its derivatives ("M", "dM_wb", "dM_z",
    "dM_zb"), so that only H-derivatives are differenced numerically.
    """
    grid: ProductGrid
    Aw: np.ndarray
    Awb: np.ndarray
    Az: np.ndarray
    Azb: np.ndarray
    gauge: str = "holomorphic"
    H: np.ndarray | None = None
    analytic: dict = field(default_factory=dict)

    def check_finite(self) -> None:
        for name in ("Aw", "Awb", "Az", "Azb"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise InstantonError(f"component {name} is not finite")

    def real_components(self):
        """(A_x, A_y, A_u, A_phi) from the complex ones."""
        Z = self.grid.Z
        Ax = self.Aw + self.Awb
        Ay = 1j * (self.Aw - self.Awb)
        Au = Z * self.Az + np.conj(Z) * self.Azb
        Ap = 1j * (Z * self.Az - np.conj(Z) * self.Azb)
        return Ax, Ay, Au, Ap


def connection_from_pair(H: HermitianMetricField, e: EtaField) -> ConnectionField:
    g, Hv = H.grid, H.values
    mc.bcheck_pd(Hv)
    Hinv = mc.binv(Hv)
    Au = _log_du(Hv, g)
    Ap = mc.bmul(Hinv, _d(Hv, g, 3))
    Ax = mc.bmul(Hinv, _d(Hv, g, 0))
    Ay = mc.bmul(Hinv, _d(Hv, g, 1))
    eta = np.broadcast_to(e.field(g.W, g.Z), Hv.shape)
    Az = (Au - 1j * Ap) / (2 * g.Z)
    Azb_H = (Au + 1j * Ap) / (2 * np.conj(g.Z))
    analytic = _eta_terms(e, g, Hv, Hinv, 0.5 * (Ax + 1j * Ay), Az, Azb_H)
    Aw = 0.5 * (Ax - 1j * Ay) - analytic["M"]
    zero = np.zeros_like(Hv)
    A = ConnectionField(g, Aw, eta.copy(), Az, zero, "holomorphic", Hv, analytic)
    A.check_finite()
    return A


def _eta_terms(e, g, H, Hinv, Awb_H, Az_H, Azb_H) -> dict:
    """Exact eta-derivatives and M = H^{-1} eta^* H with
    d_a M = [M, H^{-1} d_a H] + H^{-1} (d_abar eta)^* H."""
    shape = H.shape
    ev = {k: np.broadcast_to(e.field(g.W, g.Z, k), shape) for k in ("eta", "dw", "dz")}
    conj_h = lambda X: mc.bmul(mc.bmul(Hinv, mc.badj(X)), H)
    M = conj_h(ev["eta"])
    return {"w": ev["dw"], "z": ev["dz"], "M": M,
            "dM_wb": mc.bcomm(M, Awb_H) + conj_h(ev["dw"]),
            "dM_z": mc.bcomm(M, Az_H),
            "dM_zb": mc.bcomm(M, Azb_H) + conj_h(ev["dz"])}


def approx_connection(xi0: LoopAlgebraElement, e: EtaField, g: ProductGrid) -> ConnectionField:
    """eta dwbar - H_xi^{-1} eta^* H_xi dw + i xi0 dz / z, closed form on the grid."""
    Hxi = initial_metric(xi0, g).values
    a = xi0.eigenvalues()
    Az = np.zeros_like(Hxi)
    for j in range(len(a)):
        Az[j, j] = a[j] / g.Z
    eta = np.broadcast_to(e.field(g.W, g.Z), Hxi.shape).copy()
    # (H^{-1} eta^* H)_ij = |z|^{2(a_j - a_i)} conj(eta_ji)
    c = (a[None, :] - a[:, None]).reshape(len(a), len(a), 1, 1, 1, 1)
    Aw = -np.exp(2 * c * g.U) * mc.badj(eta)
    Azb_H = np.conj(Az * g.Z) / np.conj(g.Z)
    analytic = _eta_terms(e, g, Hxi, mc.binv(Hxi), np.zeros_like(Hxi), Az, Azb_H)
    return ConnectionField(g, Aw, eta, Az, np.zeros_like(Hxi), "holomorphic", Hxi, analytic)


# ---------------------------------------------------------------------------
# curvature

@dataclass
class CurvatureSample:
    grid: ProductGrid
    F: dict
    H: np.ndarray | None = None

    def component(self, a: str, b: str) -> np.ndarray:
        """F_ab for a, b in {w, wb, z, zb}, using F_ba = -F_ab."""
        key = a + b
        if key in self.F:
            return self.F[key]
        if b + a in self.F:
            return -self.F[b + a]
        if a == b:
            return np.zeros_like(self.F["wbw"])
        raise KeyError(key)

    def norm2(self, X: np.ndarray) -> np.ndarray:
        """Pointwise tr(X^* H X H^{-1}) (Frobenius norm squared in a unitary frame)."""
        if self.H is None:
            return np.sum(np.abs(X) ** 2, axis=(0, 1))
        Y = mc.bmul(mc.bmul(mc.badj(X), self.H), mc.bmul(X, mc.binv(self.H)))
        return np.maximum(mc.btrace(Y).real, 0.0)

    def _weights(self):
        g = self.grid
        cw = g.conf_w
        az2 = np.abs(g.Z) ** 2 * g.conf_z
        return cw, az2

    def b_tensor(self) -> np.ndarray:
        """4 |z|^2 u^2 F_zbz + (1+|w|^2)^2 F_wbw, the curvature form of B."""
        cw, az2 = self._weights()
        return 4 * az2 * self.F["zbz"] + cw * self.F["wbw"]

    def density(self) -> np.ndarray:
        """|F|^2 in the product metric."""
        cw, az2 = self._weights()
        n = self.norm2
        return (cw ** 2 / 4 * n(self.F["wbw"]) + 4 * az2 ** 2 * n(self.F["zbz"])
                + cw * az2 * (n(self.F["wz"]) + n(self.F["wbzb"]) + n(self.F["wzb"]) + n(self.F["wbz"])))

    def plus_density(self) -> np.ndarray:
        """|F^+|^2: the (2,0), (0,2) parts and the Kahler-form part."""
        cw, az2 = self._weights()
        return cw * az2 * (self.norm2(self.F["wz"]) + self.norm2(self.F["wbzb"])) \
            + self.norm2(self.b_tensor()) / 8

    def top_density(self) -> np.ndarray:
        """tr(F ^ F) / dvol = |F^-|^2 - |F^+|^2."""
        return self.density() - 2 * self.plus_density()

    def unitarity_defect(self) -> float:
        """Max violation of the reality conditions of a unitary curvature."""
        H = self.H
        adj = (lambda X: mc.badj(X)) if H is None else (lambda X: mc.bh_adjoint(H, X))
        F = self.F
        pairs = [(F["wbw"], adj(F["wbw"])), (F["zbz"], adj(F["zbz"])),
                 (F["wzb"], -adj(F["wbz"])), (F["wz"], -adj(F["wbzb"]))]
        scale = max(1.0, max(float(np.max(np.abs(X))) for X in F.values()))
        return max(float(np.max(np.abs(X - Y))) for X, Y in pairs) / scale


def curvature(A: ConnectionField) -> CurvatureSample:
    """F_ab = d_a A_b - d_b A_a + [A_a, A_b].

    The z-directions are differenced in the smooth log-polar components
    A_u = z A_z + zbar A_zbar, A_phi = i(z A_z - zbar A_zbar) and converted
    with d_z = (d_u - i d_phi) / 2z afterwards.
    """
    g = A.grid
    if min(g.nx, g.ny, g.nu) < 3:
        raise InstantonError("curvature needs at least three nodes per axis")
    Aw, Awb = A.Aw, A.Awb
    _, _, Au, Ap = A.real_components()
    Z = g.Z
    an = A.analytic
    c = mc.bcomm
    du = lambda f: _d(f, g, 2)
    dp = lambda f: _d(f, g, 3)
    if an:
        # A_wbar = eta is holomorphic in z
        dw_Awb = an["w"]
        du_Awb = Z * an["z"]
        dp_Awb = 1j * Z * an["z"]
    else:
        dw_Awb, du_Awb, dp_Awb = _dw(Awb, g), du(Awb), dp(Awb)
    if "M" in an:
        AwH = Aw + an["M"]
        dM_u = Z * an["dM_z"] + np.conj(Z) * an["dM_zb"]
        dM_p = 1j * (Z * an["dM_z"] - np.conj(Z) * an["dM_zb"])
        dwb_Aw = _dwb(AwH, g) - an["dM_wb"]
        du_Aw = du(AwH) - dM_u
        dp_Aw = dp(AwH) - dM_p
    else:
        dwb_Aw, du_Aw, dp_Aw = _dwb(Aw, g), du(Aw), dp(Aw)
    Fwu = _dw(Au, g) - du_Aw + c(Aw, Au)
    Fwp = _dw(Ap, g) - dp_Aw + c(Aw, Ap)
    Fbu = _dwb(Au, g) - du_Awb + c(Awb, Au)
    Fbp = _dwb(Ap, g) - dp_Awb + c(Awb, Ap)
    Fup = du(Ap) - dp(Au) + c(Au, Ap)
    z2, zb2 = 2 * Z, 2 * np.conj(Z)
    F = {
        "wbzb": (Fbu + 1j * Fbp) / zb2,
        "wz": (Fwu - 1j * Fwp) / z2,
        "wbw": dwb_Aw - dw_Awb + c(Awb, Aw),
        "zbz": -0.5j * Fup / np.abs(Z) ** 2,
        "wzb": (Fwu + 1j * Fwp) / zb2,
        "wbz": (Fbu - 1j * Fbp) / z2,
    }
    return CurvatureSample(g, F, A.H)


def _region(g: ProductGrid, margin: int) -> tuple:
    m = max(int(margin), 0)
    sl = slice(m, -m) if m else slice(None)
    return (sl, sl, sl, slice(None))


def asd_residual(F: CurvatureSample, margin: int = 1) -> dict:
    """sup and L^2 of |F^+| over nodes at least ``margin`` cells from the boundary."""
    R = _region(F.grid, margin)
    if 2 * margin >= min(F.grid.nx, F.grid.ny, F.grid.nu):
        raise InstantonError(f"margin {margin} leaves no nodes on a {F.grid.shape} grid")
    p2 = F.plus_density()
    vol = np.broadcast_to(F.grid.volume, F.grid.shape)
    return {"sup": float(np.sqrt(np.max(p2[R]))),
            "L2": float(np.sqrt(np.sum(p2[R] * vol[R]))),
            "margin": margin}


def asd_crosscheck(F: CurvatureSample, H: HermitianMetricField, e: EtaField,
                   margin: int = 1) -> float:
    """sup over the region of |B_curv - B_flow|, both in the H-norm."""
    Bf = hym_tensor(H, e)
    R = (slice(None), slice(None)) + _region(F.grid, max(margin, 1))
    diff = F.b_tensor()[R] - Bf[R]
    S = CurvatureSample(F.grid, F.F, None if F.H is None else F.H[R])
    return float(np.sqrt(np.max(S.norm2(diff))))


# ---------------------------------------------------------------------------
# charge

def _tan_nodes(n: int, R: float | None):
    """Gauss-Legendre nodes for the x axis through x = tan(s)."""
    lim = np.pi / 2 if R is None else np.arctan(R)
    t, wt = np.polynomial.legendre.leggauss(n)
    s = lim * t
    return np.tan(s), lim * wt / np.cos(s) ** 2


def _box_integral(density, n: int, R: float | None, tol: float, max_n: int = 1024):
    def once(n):
        x, wx = _tan_nodes(n, R)
        w = x[:, None] + 1j * x[None, :]
        return float(np.sum(density(w) * wx[:, None] * wx[None, :]))
    prev = once(n)
    while True:
        n *= 2
        cur = once(n)
        err = abs(cur - prev)
        if err <= tol * max(1.0, abs(cur)):
            return cur, err
        if n >= max_n:
            raise QuadratureError(f"box quadrature not converged (estimate {err:.2e})")
        prev = cur


def _contour_density(e: EtaField, w: np.ndarray) -> np.ndarray:
    """oint_{|z|=1} Re tr(eta^* (z d_z eta + [Lambda, eta])) dtheta, Lambda = diag(a)."""
    nth = 4 * (e.K + 1)
    z = np.exp(2j * np.pi * np.arange(nth) / nth)
    wz = w[..., None]
    eta = e.field(wz, z)
    zd = z * e.field(wz, z, "dz")
    lam = e.a.reshape(-1, 1, *([1] * wz.ndim))
    br = lam * eta - eta * lam.reshape(1, -1, *([1] * wz.ndim))
    dens = np.sum((np.conj(eta) * (zd + br)).real, axis=(0, 1))
    return dens.sum(axis=-1) * (2 * np.pi / nth)


def charge(e: EtaField, n: int = 64, tol: float = 1e-6, R: float | None = None) -> tuple[float, float]:
    """Topological charge from the boundary contour at |z| = 1 and a
    Gauss-Legendre w-quadrature (whole plane when R is None).

    Returns (value, quadrature error estimate).
    """
    if e.is_zero:
        return 0.0, 0.0
    val, err = _box_integral(lambda w: _contour_density(e, w), n, R, tol)
    return val / (2 * np.pi ** 2), err / (2 * np.pi ** 2)


def charge_report(e: EtaField, R: float, n: int = 64, tol: float = 1e-6) -> dict:
    """Box-truncated charge with the truncation estimated by doubling R."""
    k1, e1 = charge(e, n, tol, R)
    k2, e2 = charge(e, n, tol, 2 * R)
    full, ef = charge(e, n, tol)
    return {"R": R, "charge_R": k1, "charge_2R": k2, "truncation": abs(k2 - k1),
            "charge": full, "quadrature_error": max(e1, e2, ef)}


def charge_on_domain(e: EtaField, g: ProductGrid, n: int = 64, tol: float = 1e-8) -> float:
    """(1/pi) int_box sum (k + c)|eta_k|^2 (delta^{2(k+c)} - eps^{2(k+c)}) d^2w:
    the integral of tr(F ^ F) / 8 pi^2 of the approximate connection over the grid box."""
    if e.is_zero:
        return 0.0
    c = e.twist
    k = np.arange(e.K + 1)[:, None, None] + c[None]
    fac = np.where(k > 0, k * (g.delta ** (2 * k) - g.eps ** (2 * k)), 0.0)

    def dens(w):
        cv = e.coeff_values(w)
        return np.einsum("kij...,kij->...", np.abs(cv) ** 2, fac)

    # Gauss-Legendre in arctan-coordinates over the finite box
    val, _ = _box_integral(dens, n, g.R_w, tol)
    return val / np.pi


# ---------------------------------------------------------------------------
# energy identity

def _face_weights(g: ProductGrid, axis: int) -> np.ndarray:
    """Trapezoid weights on a face normal to a non-periodic axis."""
    w = [g._trap(0)[:, None, None, None], g._trap(1)[None, :, None, None],
         g._trap(2)[None, None, :, None], np.full((1, 1, 1, g.nphi), g.hphi)]
    w[axis] = np.ones_like(w[axis])
    return w[0] * w[1] * w[2] * w[3]


def chern_simons_boundary(A: ConnectionField) -> float:
    """Boundary integral of tr(A dA + 2/3 A^3) over the faces of the grid box.

    By Stokes this equals the bulk integral of tr(F ^ F) (orientation
    dx dy du dphi), evaluated here without any interior node.
    """
    g = A.grid
    comps = A.real_components()
    total = 0.0
    for m in range(3):
        tang = [k for k in range(4) if k != m]
        wts = _face_weights(g, m)
        ax = 2 + m
        for end, sign in ((0, -1.0), (-1, 1.0)):
            orient = sign * (-1) ** m
            take = lambda X: np.take(X, [end], axis=ax)
            Ai = [take(comps[k]) for k in tang]
            dens = 0.0
            for (i, j, k), eps in (((0, 1, 2), 1), ((1, 2, 0), 1), ((2, 0, 1), 1),
                                   ((0, 2, 1), -1), ((2, 1, 0), -1), ((1, 0, 2), -1)):
                dA = take(_d(comps[tang[k]], g, tang[j]))
                dens = dens + eps * mc.btrace(mc.bmul(Ai[i], dA))
            dens = dens + 2 * mc.btrace(mc.bmul(Ai[0], mc.bcomm(Ai[1], Ai[2])))
            w = np.take(np.broadcast_to(wts, g.shape), [end], axis=m)
            total += orient * float(np.sum(dens.real * w))
    return total


def energy(F: CurvatureSample, e: EtaField | None = None, A: ConnectionField | None = None) -> dict:
    """Both sides of  int |F|^2 = 2 int |F^+|^2 + int tr(F ^ F)  on the grid domain.

    The topological term on the right is evaluated independently of the bulk
    curvature: as a Chern-Simons boundary integral when A is given (valid for
    any connection), else from eta (exact only for the approximate
    connection), else from the curvature itself.
    """
    g = F.grid
    vol = np.broadcast_to(g.volume, g.shape)
    lhs = float(np.sum(F.density() * vol))
    plus = float(np.sum(F.plus_density() * vol))
    out = {"lhs": lhs, "plus": plus,
           "top_curvature": float(np.sum(F.top_density() * vol))}
    if e is not None:
        out["top_eta"] = 8 * np.pi ** 2 * charge_on_domain(e, g)
    if A is not None:
        out["top_boundary"] = chern_simons_boundary(A)
    route = "boundary" if A is not None else "eta" if e is not None else "curvature"
    top = out["top_" + route]
    rhs = 2 * plus + top
    out.update(route=route, top=top, rhs=rhs,
               rel_gap=abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300))
    return out


# ---------------------------------------------------------------------------
# caloron fields

def _unitary_frame(H: np.ndarray) -> np.ndarray:
    """g with g^* g = H (upper-triangular Cholesky factor)."""
    return mc.badj(mc.bchol(H))


def _expm_anti(X: np.ndarray) -> np.ndarray:
    """exp of anti-Hermitian component-major matrices via eigh of -iX."""
    S = mc.to_stack(-1j * X)
    S = 0.5 * (S + np.conj(np.swapaxes(S, -1, -2)))
    lam, V = np.linalg.eigh(S)
    E = (V * np.exp(1j * lam)[..., None, :]) @ np.conj(np.swapaxes(V, -1, -2))
    return mc.from_stack(E)


def radial_gauge(A: ConnectionField) -> ConnectionField:
    """Unitary frame, then transport along u from the |z| = delta ring inward
    so that the u-component vanishes (fourth-order Magnus steps)."""
    g = A.grid
    H = A.H if A.H is not None else mc.beye(A.Aw.shape[0], g.shape)
    G = _unitary_frame(H)
    Gi = mc.binv(G)
    Ax, Ay, Au, Ap = A.real_components()

    def gauge(M, dG):
        return mc.bmul(mc.bmul(G, M), Gi) - mc.bmul(dG, Gi)

    Ux, Uy = gauge(Ax, _d(G, g, 0)), gauge(Ay, _d(G, g, 1))
    Uu, Up = gauge(Au, _d(G, g, 2)), gauge(Ap, _d(G, g, 3))
    # k' = k Uu, k = I at the last u node
    spline = CubicSpline(g.u, Uu, axis=4)
    n = Uu.shape[0]
    K = np.empty_like(Uu)
    K[..., -1, :] = mc.beye(n, (g.nx, g.ny, g.nphi))
    c1, c2 = 0.5 - np.sqrt(3) / 6, 0.5 + np.sqrt(3) / 6
    for j in range(g.nu - 2, -1, -1):
        u0, h = g.u[j + 1], g.u[j] - g.u[j + 1]
        A1, A2 = spline(u0 + c1 * h), spline(u0 + c2 * h)
        Om = 0.5 * h * (A1 + A2) + np.sqrt(3) / 12 * h * h * mc.bcomm(A1, A2)
        Om = 0.5 * (Om - mc.badj(Om))
        K[..., j, :] = mc.bmul(K[..., j + 1, :], _expm_anti(Om))
    Ki = mc.badj(K)

    def gauge2(M, axis):
        return mc.bmul(mc.bmul(K, M), Ki) - mc.bmul(_d(K, g, axis), Ki)

    Rx, Ry, Rp = gauge2(Ux, 0), gauge2(Uy, 1), gauge2(Up, 3)
    Z = g.Z
    Aw, Awb = 0.5 * (Rx - 1j * Ry), 0.5 * (Rx + 1j * Ry)
    Az = -1j * Rp / (2 * Z)
    Azb = 1j * Rp / (2 * np.conj(Z))
    return ConnectionField(g, Aw, Awb, Az, Azb, "radial", None)


@dataclass
class CaloronSample:
    """Fields on S^1 x R^3 at the grid nodes: theta, x (3, ...), A (3, n, n, ...),
    Phi (n, n, ...) and the covariant derivative DPhi (3, n, n, ...).

    ``projection_defect`` is the largest anti-Hermitian violation of (A, Phi)
    at interior nodes removed by projection, a discretisation error of the
    unitary frame (one-sided differences make it larger on the boundary).
    """
    theta: np.ndarray
    x: np.ndarray
    A: np.ndarray
    Phi: np.ndarray
    DPhi: np.ndarray
    xi0: LoopAlgebraElement
    grid: ProductGrid | None = None
    projection_defect: float = 0.0

    @property
    def r(self) -> np.ndarray:
        return np.linalg.norm(self.x, axis=0)

    def anti_hermitian_defect(self) -> float:
        return float(np.max(np.abs(self.Phi + mc.badj(self.Phi))))

    def sample_at(self, theta, x) -> dict:
        """Multilinear interpolation of (A, Phi) at caloron points."""
        from .geometry import from_caloron_coords
        g = self.grid
        theta = np.asarray(theta, dtype=float)
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x, axis=0)
        if np.any(r <= 0):
            raise InstantonError("r = 0 requested")
        mu = self.xi0.mu
        w, z = from_caloron_coords(theta, x, mu)
        if np.any(np.abs(z) < g.eps) or np.any(np.abs(z) > g.delta):
            raise InstantonError("point outside the computed annulus")
        if np.any(~np.isfinite(w)) or np.any(np.abs(w.real) > g.R_w) or np.any(np.abs(w.imag) > g.R_w):
            raise InstantonError("point outside the computed w-box")
        coords = _comp_coords(g)
        q = np.stack([_to_comp(g, w.real), _to_comp(g, w.imag),
                      _to_comp_u(g, np.log(np.abs(z))), np.mod(np.angle(z), 2 * np.pi)], axis=-1)
        out = {}
        for name, arr in (("Phi", self.Phi), ("A", self.A)):
            vals = np.concatenate([arr, arr[..., :1]], axis=-1)
            vals = np.moveaxis(vals, (-4, -3, -2, -1), (0, 1, 2, 3))
            f = RegularGridInterpolator(coords, vals)
            res = f(q.reshape(-1, 4))
            out[name] = np.moveaxis(res, 0, -1).reshape(arr.shape[:-4] + theta.shape)
        return out


def _comp_coords(g: ProductGrid):
    if g.stretch:
        sx, sy, su = np.arctan(g.x), np.arctan(g.y), np.log(-g.u)
    else:
        sx, sy, su = g.x, g.y, g.u
    return (sx, sy, su, np.append(g.phi, 2 * np.pi))


def _to_comp(g, v):
    return np.arctan(v) if g.stretch else v


def _to_comp_u(g, u):
    return np.log(-u) if g.stretch else u


def _jacobian_inverse(g: ProductGrid, mu: float) -> np.ndarray:
    """d(xw, yw, u) / d(x1, x2, x3) per node, shape (3, 3, nx, ny, nu, 1)."""
    xw = g.W.real
    yw = g.W.imag
    u = g.U
    d = 1 + xw ** 2 + yw ** 2
    r = -u / mu
    n = np.stack(np.broadcast_arrays(2 * xw / d, 2 * yw / d, (d - 2) / d))
    dn_dx = np.stack(np.broadcast_arrays((2 * d - 4 * xw ** 2) / d ** 2, -4 * xw * yw / d ** 2,
                                         4 * xw / d ** 2))
    dn_dy = np.stack(np.broadcast_arrays(-4 * xw * yw / d ** 2, (2 * d - 4 * yw ** 2) / d ** 2,
                                         4 * yw / d ** 2))
    shape = np.broadcast_shapes(xw.shape, u.shape)
    J = np.empty((3, 3) + shape)
    J[:, 0] = np.broadcast_to(r * dn_dx, (3,) + shape)
    J[:, 1] = np.broadcast_to(r * dn_dy, (3,) + shape)
    J[:, 2] = np.broadcast_to(-n / mu, (3,) + shape)
    Jinv = np.linalg.inv(np.moveaxis(J, (0, 1), (-2, -1)))
    return np.moveaxis(Jinv, (-2, -1), (0, 1))


def caloron_fields(H: HermitianMetricField, e: EtaField, xi0: LoopAlgebraElement | None = None,
                   A: ConnectionField | None = None) -> CaloronSample:
    """(A, Phi) on S^1 x R^3 at every grid node in the radial unitary gauge.

    Phi is -A_phi there, so the approximate connection gives Phi = xi0.
    """
    xi0 = xi0 or e.xi0
    g = H.grid
    if g.delta >= 1:
        raise InstantonError("r = 0 requested")
    A = A or connection_from_pair(H, e)
    R = radial_gauge(A)
    comps = R.real_components()
    inner = (slice(None), slice(None)) + _region(g, 1)
    defect = max(float(np.max(np.abs(X + mc.badj(X))[inner])) for X in comps) / 2
    Ax, Ay, _, Ap = (0.5 * (X - mc.badj(X)) for X in comps)
    Phi = -Ap
    mu = xi0.mu
    Jinv = _jacobian_inverse(g, mu)
    # A_i = sum_q A_q dq/dx_i with A_u = 0 in this gauge
    A3 = np.stack([Jinv[0, i] * Ax + Jinv[1, i] * Ay for i in range(3)])
    # covariant derivative of Phi
    DPq = [_d(Phi, g, a) + mc.bcomm(M, Phi) for a, M in ((0, Ax), (1, Ay))]
    DPu = _d(Phi, g, 2)
    D3 = np.stack([Jinv[0, i] * DPq[0] + Jinv[1, i] * DPq[1] + Jinv[2, i] * DPu for i in range(3)])
    theta = np.broadcast_to(g.PHI / mu, g.shape)
    r = np.broadcast_to(-g.U / mu, g.shape)
    x = r * np.broadcast_to(sphere_point(g.W[:, :, 0, 0])[..., None, None], (3,) + g.shape)
    return CaloronSample(theta, x, A3, Phi, D3, xi0, g, defect)


def _fit_power(r: np.ndarray, q: np.ndarray) -> dict:
    ok = q > 1e-300
    if ok.sum() < 3:
        return {"exponent": float("nan"), "ci95": float("nan"), "points": int(ok.sum())}
    X = np.stack([np.ones(ok.sum()), np.log(r[ok])], axis=1)
    y = np.log(q[ok])
    coef, res, *_ = np.linalg.lstsq(X, y, rcond=None)
    dof = max(ok.sum() - 2, 1)
    s2 = float(np.sum((X @ coef - y) ** 2)) / dof
    cov = s2 * np.linalg.inv(X.T @ X)
    return {"exponent": float(coef[1]), "ci95": float(1.96 * np.sqrt(cov[1, 1])),
            "points": int(ok.sum())}


def decay_report(c: CaloronSample, xi0: LoopAlgebraElement | None = None,
                 r_range: tuple | None = None) -> dict:
    """Fitted power laws in r of the deviations of Phi from xi0 (reported only)."""
    xi0 = xi0 or c.xi0
    X = xi0.mode(0).reshape(xi0.dim, xi0.dim, *([1] * c.Phi.ndim)[2:])
    r = c.r
    lo, hi = r_range or (float(np.min(r)), float(np.max(r)))
    if hi < 10 * lo:
        raise InstantonError("decay fit needs samples spanning a decade of r")
    D = c.Phi - X
    dev = np.sqrt(np.sum(np.abs(D) ** 2, axis=(0, 1)))
    inv = np.abs(mc.btrace(mc.bmul(c.Phi, c.Phi)) - np.trace(xi0.mode(0) @ xi0.mode(0)))
    grad = np.sqrt(np.sum(np.abs(c.DPhi) ** 2, axis=(0, 1, 2)))
    normA = np.sqrt(np.sum(np.abs(c.A) ** 2, axis=(0, 1, 2)))
    # the angular part of grad |Phi - xi0|: from the components orthogonal to x
    out = {"r_range": [lo, hi]}
    sel = (r >= lo) & (r <= hi)
    # max over the sphere and theta at each radius
    rr = np.round(r[sel], 12)
    radii = np.unique(rr)
    for name, q in (("phi_deviation", dev), ("invariant_deviation", inv),
                    ("covariant_gradient", grad), ("connection_norm", normA)):
        qs = q[sel]
        peak = np.array([np.max(qs[rr == x]) for x in radii])
        spread = np.array([np.max(qs[rr == x]) - np.min(qs[rr == x]) for x in radii])
        fit = _fit_power(radii, peak)
        fit["max"] = float(np.max(peak)) if peak.size else 0.0
        fit["max_theta_spread"] = float(np.max(spread)) if spread.size else 0.0
        out[name] = fit
    return out


# ---------------------------------------------------------------------------
# lattice-shift probe

def _densities(H: HermitianMetricField, e: EtaField):
    F = curvature(connection_from_pair(H, e))
    return F.top_density(), F.density()


def shift_equivalence_probe(e: EtaField, k, g: ProductGrid, cfg: FlowConfig | None = None,
                            partner: EtaField | None = None, margin: int = 1) -> dict:
    """Run the flows of e and of its lattice shift (or of ``partner``) and compare
    gauge-invariant densities tr(F ^ F) and |F|^2 node-wise."""
    cfg = cfg or FlowConfig()
    if partner is None:
        partner, _ = lattice_shift(e, k)
    H1, d1 = run_flow(e, g, cfg)
    H2, d2 = run_flow(partner, g, cfg)
    t1, n1 = _densities(H1, e)
    t2, n2 = _densities(H2, partner)
    R = _region(g, margin)
    scale_t = max(float(np.max(np.abs(t1[R]))), 1e-300)
    scale_n = max(float(np.max(np.abs(n1[R]))), 1e-300)
    return {"top_discrepancy": float(np.max(np.abs(t1[R] - t2[R]))) / scale_t,
            "energy_discrepancy": float(np.max(np.abs(n1[R] - n2[R]))) / scale_n,
            "converged": [d1.converged, d2.converged],
            "shift": None if k is None else list(np.asarray(k).tolist())}
