"""Product grid on S^2 x (annulus), its metric weights and Laplacian, the
one-dimensional Green's operator, and the conformal map to S^1 x R^3.

Coordinates: w = x + i y on a square stereographic chart, z = e^{u + i phi}
in log-polar form. The product metric is

    g = 4 |dw|^2 / (1 + |w|^2)^2  +  (du^2 + dphi^2) / u^2 .
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from functools import cached_property

import numpy as np
from scipy.integrate import quad


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class ProductGrid:
    """Tensor grid in (x, y, u, phi).

    With ``stretch`` the nodes are uniform in computational coordinates
    sigma = arctan(x), arctan(y) and s = ln(-u); otherwise uniform in x, y, u.
    Derivatives always use the physical node positions.
    """
    nx: int = 13
    ny: int = 13
    nu: int = 25
    nphi: int = 8
    R_w: float = 4.0
    eps: float = float(np.exp(-6.0))
    delta: float = 1.0 - 2.0 ** -6
    stretch: bool = True

    def __post_init__(self):
        if not (0 < self.eps < self.delta < 1):
            raise GridError(f"need 0 < eps < delta < 1, got eps={self.eps}, delta={self.delta}")
        if min(self.nx, self.ny, self.nu, self.nphi) < 4:
            raise GridError("every axis needs at least 4 nodes")
        if not self.R_w > 0:
            raise GridError("R_w must be positive")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "ProductGrid":
        d = dict(d)
        for key in ("eps", "delta", "R_w"):
            if isinstance(d.get(key), str):
                d[key] = float(eval_scalar(d[key]))
        return cls(**d)

    def with_(self, **kw) -> "ProductGrid":
        d = asdict(self)
        d.update(kw)
        return ProductGrid(**d)

    def refined(self) -> "ProductGrid":
        """Halve every computational spacing; old nodes stay nodes."""
        return self.with_(nx=2 * self.nx - 1, ny=2 * self.ny - 1, nu=2 * self.nu - 1,
                          nphi=2 * self.nphi)

    # -- axes
    @property
    def shape(self) -> tuple:
        return (self.nx, self.ny, self.nu, self.nphi)

    def _w_axis(self, n: int) -> np.ndarray:
        if self.stretch:
            return np.tan(np.linspace(-np.arctan(self.R_w), np.arctan(self.R_w), n))
        return np.linspace(-self.R_w, self.R_w, n)

    @cached_property
    def x(self) -> np.ndarray:
        return self._w_axis(self.nx)

    @cached_property
    def y(self) -> np.ndarray:
        return self._w_axis(self.ny)

    @cached_property
    def u(self) -> np.ndarray:
        a, b = np.log(self.eps), np.log(self.delta)
        if self.stretch:
            return -np.exp(np.linspace(np.log(-a), np.log(-b), self.nu))
        return np.linspace(a, b, self.nu)

    @cached_property
    def phi(self) -> np.ndarray:
        return 2 * np.pi * np.arange(self.nphi) / self.nphi

    @property
    def hphi(self) -> float:
        return 2 * np.pi / self.nphi

    @property
    def h(self) -> float:
        """Largest computational spacing, the refinement parameter."""
        if self.stretch:
            hw = 2 * np.arctan(self.R_w) / (min(self.nx, self.ny) - 1)
            hu = (np.log(-np.log(self.eps)) - np.log(-np.log(self.delta))) / (self.nu - 1)
        else:
            hw = 2 * self.R_w / (min(self.nx, self.ny) - 1)
            hu = (np.log(self.delta) - np.log(self.eps)) / (self.nu - 1)
        return max(hw, hu, self.hphi)

    def edges(self, axis: int) -> np.ndarray:
        """Physical edge lengths along a non-periodic axis (0, 1, 2)."""
        return np.diff((self.x, self.y, self.u)[axis])

    def duals(self, axis: int) -> np.ndarray:
        """Dual cell lengths at interior nodes."""
        q = (self.x, self.y, self.u)[axis]
        return (q[2:] - q[:-2]) / 2

    def _trap(self, axis: int) -> np.ndarray:
        q = (self.x, self.y, self.u)[axis]
        t = np.zeros_like(q)
        d = np.diff(q)
        t[:-1] += d / 2
        t[1:] += d / 2
        return t

    # -- broadcastable node coordinates, shape (nx, ny, nu, nphi)-compatible
    @cached_property
    def W(self) -> np.ndarray:
        return (self.x[:, None] + 1j * self.y[None, :])[:, :, None, None]

    @cached_property
    def U(self) -> np.ndarray:
        return self.u[None, None, :, None]

    @cached_property
    def PHI(self) -> np.ndarray:
        return self.phi[None, None, None, :]

    @cached_property
    def Z(self) -> np.ndarray:
        return np.exp(self.U + 1j * self.PHI)

    @cached_property
    def conf_w(self) -> np.ndarray:
        """(1 + |w|^2)^2."""
        return (1 + np.abs(self.W) ** 2) ** 2

    @cached_property
    def conf_z(self) -> np.ndarray:
        """u^2 = (ln|z|)^2, the log-polar form of |z|^2 (ln|z|)^2."""
        return self.U ** 2

    @cached_property
    def rho(self) -> np.ndarray:
        """Ratio of the conformal factors of the annulus and sphere metrics."""
        return self.conf_w / (4 * np.abs(self.Z) ** 2 * self.conf_z)

    @cached_property
    def interior(self) -> tuple:
        return (slice(1, -1), slice(1, -1), slice(1, -1), slice(None))

    def inner(self, arr: np.ndarray) -> np.ndarray:
        """Interior part of a broadcastable grid array (size-1 axes kept)."""
        lead = arr.ndim - 4
        idx = tuple(sl if arr.shape[lead + k] > 1 else slice(None)
                    for k, sl in enumerate(self.interior))
        return arr[(slice(None),) * lead + idx]

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        m = np.ones(self.shape, dtype=bool)
        m[self.interior] = False
        return m

    @cached_property
    def volume(self) -> np.ndarray:
        """Trapezoid weights of the Riemannian volume 4 dx dy du dphi / ((1+|w|^2)^2 u^2)."""
        cell = (self._trap(0)[:, None, None, None] * self._trap(1)[None, :, None, None]
                * self._trap(2)[None, None, :, None] * self.hphi)
        return cell * 4 / (self.conf_w * self.conf_z)

    @cached_property
    def euclid_volume(self) -> np.ndarray:
        """Trapezoid weights of d^2w d^2z = |z|^2 dx dy du dphi."""
        return self.volume * self.conf_w * self.conf_z / 4 * np.abs(self.Z) ** 2

    def integrate(self, f: np.ndarray, euclid: bool = False) -> float:
        return float(np.sum(f * (self.euclid_volume if euclid else self.volume)))

    def axis_shape(self, axis: int, n: int) -> tuple:
        shp = [1, 1, 1, 1]
        shp[axis] = n
        return tuple(shp)


def eval_scalar(text: str) -> float:
    """Numbers such as "exp(-6)" or "1 - 2**-6" in configs."""
    import sympy as sp
    expr = sp.sympify(str(text).replace("^", "**"), locals={"e": sp.E})
    if expr.free_symbols:
        raise GridError(f"not a number: {text!r}")
    return float(expr)


# ---------------------------------------------------------------------------
# Laplacian

def laplacian_apply(f: np.ndarray, g: ProductGrid) -> np.ndarray:
    """-u^2 (f_uu + f_phiphi) - (1 + |w|^2)^2 / 4 (f_xx + f_yy); zero on boundary nodes.

    The trailing four axes of f are the grid; leading axes (matrix entries)
    are carried along.
    """
    lead = f.ndim - 4
    if f.shape[lead:] != g.shape:
        raise GridError(f"field shape {f.shape[lead:]} does not match grid {g.shape}")
    fxx, fyy, fuu, fpp = _second_diffs(f, g, lead)
    I = g.interior
    out = np.zeros_like(f)
    s = (slice(None),) * lead
    out[s + I] = -g.inner(g.conf_z) * (fuu + fpp) - g.inner(g.conf_w) / 4 * (fxx + fyy)
    return out


def _second_diffs(f: np.ndarray, g: ProductGrid, lead: int):
    """Three-point second differences on the physical (possibly stretched)
    nodes, interior only; exact for quadratics."""
    s = (slice(None),) * lead
    I = (slice(1, -1), slice(1, -1), slice(1, -1), slice(None))
    c = f[s + I]
    out = []
    for axis in range(3):
        hp = g.edges(axis)[1:].reshape(g.axis_shape(axis, -1))
        hm = g.edges(axis)[:-1].reshape(g.axis_shape(axis, -1))
        plus, minus = list(I), list(I)
        plus[axis], minus[axis] = slice(2, None), slice(None, -2)
        fp, fm = f[s + tuple(plus)], f[s + tuple(minus)]
        out.append(2 * ((fp - c) / hp - (c - fm) / hm) / (hp + hm))
    ax = lead + 3
    out.append((np.roll(c, -1, ax) + np.roll(c, 1, ax) - 2 * c) / g.hphi ** 2)
    return out


# ---------------------------------------------------------------------------
# one-dimensional Green's operator

def green1d(absz: float, s: float) -> float:
    """min(-ln|z|, -ln s) / (s (ln s)^2)."""
    if not (0 < absz < 1 and 0 < s < 1):
        raise GridError("green1d needs arguments in (0, 1)")
    return min(-np.log(absz), -np.log(s)) / (s * np.log(s) ** 2)


def green_bound_integral(absz: float) -> float:
    """int_0^1 (1 - s) G(|z|, s) ds, evaluated in t = -ln s."""
    if not 0 < absz < 1:
        raise GridError("|z| must lie in (0, 1)")
    T = -np.log(absz)
    near = quad(lambda t: -np.expm1(-t) / t, 0, T, limit=200)[0]
    far = quad(lambda t: -np.expm1(-t) / t ** 2, T, np.inf, limit=200)[0]
    return near + T * far


def fit_green_bound(absz) -> dict:
    """Least-squares C in I(|z|) ~ C ln(1 - ln|z|); relative residuals reported."""
    absz = np.asarray(absz, dtype=float)
    I = np.array([green_bound_integral(a) for a in absz])
    L = np.log(1 - np.log(absz))
    C = float(L @ I / (L @ L))
    rel = (C * L - I) / I
    return {"C": C, "max_rel_residual": float(np.max(np.abs(rel))), "values": I.tolist(),
            "bound_C": float(np.max(I / L))}


# ---------------------------------------------------------------------------
# conformal map to S^1 x R^3

def sphere_point(w) -> np.ndarray:
    """Inverse stereographic image of w (w = inf is the north pole)."""
    w = np.asarray(w, dtype=complex)
    r2 = np.abs(w) ** 2
    fin = np.isfinite(r2)
    r2f = np.where(fin, r2, 0.0)
    wf = np.where(fin, w, 0.0)
    n = np.stack([2 * wf.real, 2 * wf.imag, r2f - 1]) / (1 + r2f)
    return np.where(fin, n, np.array([0.0, 0.0, 1.0]).reshape((3,) + (1,) * w.ndim))


def to_caloron_coords(w, z, mu: float = 1.0):
    """(theta, x) with r = -ln|z| / mu, theta = arg z / mu in [0, 2 pi / mu)."""
    z = np.asarray(z, dtype=complex)
    az = np.abs(z)
    if np.any((az <= 0) | (az >= 1)):
        raise GridError("|z| must lie in (0, 1)")
    r = -np.log(az) / mu
    theta = np.mod(np.angle(z), 2 * np.pi) / mu
    return theta, r * sphere_point(w)


def from_caloron_coords(theta, x, mu: float = 1.0):
    """Inverse of to_caloron_coords; returns (w, z)."""
    x = np.asarray(x, dtype=float)
    r = np.linalg.norm(x, axis=0)
    if np.any(r <= 0):
        raise GridError("r = 0 is not in the image")
    n = x / r
    with np.errstate(divide="ignore", invalid="ignore"):
        w = (n[0] + 1j * n[1]) / (1 - n[2])
    w = np.where(n[2] >= 1.0, np.inf, w)
    z = np.exp(-mu * r + 1j * mu * np.asarray(theta))
    return w, z


def caloron_map_real(q, mu: float = 1.0):
    """(x_w, y_w, u, phi) -> (theta, x1, x2, x3), written with analytic
    operations only so it accepts complex-step perturbations."""
    xw, yw, u, phi = q
    r = -u / mu
    d = 1 + xw * xw + yw * yw
    return np.array([phi / mu, r * 2 * xw / d, r * 2 * yw / d, r * (d - 2) / d])


def product_metric_real(q) -> np.ndarray:
    """Product metric in (x_w, y_w, u, phi) coordinates."""
    xw, yw, u, _ = q
    a = 4 / (1 + xw * xw + yw * yw) ** 2
    b = 1 / u ** 2
    return np.diag([a, a, b, b])


def pullback_defect(rng, mu: float = 1.0, npts: int = 100) -> float:
    """Worst relative gap between (1/r^2) times the pulled-back flat metric and
    the product metric at random points; Jacobian by complex step."""
    worst = 0.0
    for _ in range(npts):
        q = np.array([rng.uniform(-3, 3), rng.uniform(-3, 3), -rng.uniform(0.05, 5),
                      rng.uniform(0, 2 * np.pi)])
        J = np.empty((4, 4))
        for j in range(4):
            dq = np.zeros(4, dtype=complex)
            dq[j] = 1e-30j
            J[:, j] = caloron_map_real(q + dq, mu).imag / 1e-30
        r = -q[2] / mu
        ref = product_metric_real(q)
        worst = max(worst, float(np.max(np.abs(J.T @ J / r ** 2 - ref)) / np.max(np.abs(ref))))
    return worst
