"""Based holomorphic maps into loop-group orbits, encoded by the field eta.

eta(w, z) = sum_k eta_k(w) z^k with matrix coefficients that are rational in
(w, W), W standing for conj(w). Derivatives in w and conj(w) are taken
symbolically with sympy and then vectorised with lambdify.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import sympy as sp
from sympy.parsing.sympy_parser import parse_expr, standard_transformations

from .looporbit import LoopAlgebraElement

w_sym, W_sym = sp.symbols("w W")
_LOCALS = {"w": w_sym, "W": W_sym, "I": sp.I}
_ALLOWED = re.compile(r"^[0-9wWI+\-*/(). ]*$")
_IMAG_LIT = re.compile(r"(\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)j")


class MapError(ValueError):
    """Invalid holomorphic-map input."""


class InvalidShift(MapError):
    pass


class QuadratureError(RuntimeError):
    pass


def parse_rational(entry) -> sp.Expr:
    """Parse "poly" or ["num", "den"]; polynomials in w and W over complex literals."""
    if isinstance(entry, (list, tuple)):
        if len(entry) != 2:
            raise MapError(f"rational entry must be [num, den], got {entry!r}")
        num, den = parse_polynomial(entry[0]), parse_polynomial(entry[1])
        if den == 0:
            raise MapError("zero denominator")
        return sp.nsimplify(num / den, rational=True)
    if isinstance(entry, (int, float)):
        return sp.nsimplify(entry, rational=True)
    return parse_polynomial(entry)


def parse_polynomial(text) -> sp.Expr:
    if isinstance(text, (int, float)):
        return sp.nsimplify(text, rational=True)
    s = str(text).replace("^", "**")
    s = _IMAG_LIT.sub(lambda m: f"({m.group(1)}*I)", s)
    if not _ALLOWED.match(s.replace("**", "*")):
        raise MapError(f"illegal characters in polynomial {text!r}")
    try:
        expr = parse_expr(s, local_dict=dict(_LOCALS), transformations=standard_transformations)
    except Exception as exc:  # sympy raises a zoo of types
        raise MapError(f"cannot parse {text!r}: {exc}") from None
    expr = sp.nsimplify(sp.expand(expr), rational=True)
    if not expr.free_symbols <= {w_sym, W_sym}:
        raise MapError(f"unknown symbols in {text!r}")
    try:
        sp.Poly(expr, w_sym, W_sym)
    except sp.PolynomialError:
        raise MapError(f"{text!r} is not a polynomial in w, W") from None
    return expr


def conj_expr(expr: sp.Expr) -> sp.Expr:
    """Complex conjugate, rewritten in the (w, W) variables."""
    c = sp.conjugate(expr)
    return c.subs({sp.conjugate(w_sym): W_sym, sp.conjugate(W_sym): w_sym}, simultaneous=True)


def _lambdify_matrix(entries: list[list[sp.Expr]]):
    n = len(entries)
    flat = [sp.sympify(e) for row in entries for e in row]
    f = sp.lambdify((w_sym, W_sym), flat, modules="numpy")

    def ev(w):
        w = np.asarray(w, dtype=complex)
        vals = f(w, np.conj(w))
        out = np.empty((n, n) + w.shape, dtype=complex)
        for idx, v in enumerate(vals):
            out[idx // n, idx % n] = v
        return out
    return ev


@dataclass
class EtaField:
    """eta(w, z) = sum_k coeffs[k](w) z^k, with target base point xi0."""
    coeffs: list
    xi0: LoopAlgebraElement
    mode: str = "strict"
    source: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in ("strict", "permissive"):
            raise MapError("mode must be 'strict' or 'permissive'")
        self.coeffs = [sp.Matrix(c) for c in self.coeffs]
        if not self.coeffs:
            raise MapError("eta needs at least one coefficient")
        n = self.coeffs[0].shape[0]
        for c in self.coeffs:
            if c.shape != (n, n):
                raise MapError("coefficient shapes differ")
        if n != self.xi0.dim:
            raise MapError(f"eta has dim {n}, xi0 has dim {self.xi0.dim}")
        self.a = self.xi0.eigenvalues()
        self._ev = [_lambdify_matrix(c.tolist()) for c in self.coeffs]
        self._ev_dw = [_lambdify_matrix(c.diff(w_sym).tolist()) for c in self.coeffs]
        self._ev_dwb = [_lambdify_matrix(c.diff(W_sym).tolist()) for c in self.coeffs]
        self.zero_pattern = self._numeric_zero_pattern()

    # -- basic data
    @property
    def dim(self) -> int:
        return self.coeffs[0].shape[0]

    @property
    def K(self) -> int:
        return len(self.coeffs) - 1

    @property
    def twist(self) -> np.ndarray:
        """c_ij = a_i - a_j."""
        return self.a[:, None] - self.a[None, :]

    @property
    def is_zero(self) -> bool:
        return not self.zero_pattern.any()

    def _numeric_zero_pattern(self) -> np.ndarray:
        rng = np.random.default_rng(12345)
        pts = rng.normal(size=8) + 1j * rng.normal(size=8)
        vals = np.stack([ev(pts) for ev in self._ev])
        return np.max(np.abs(vals), axis=-1) > 1e-13 * max(1.0, np.max(np.abs(vals)))

    # -- evaluation, component-major outputs
    def coeff_values(self, w, which: str = "eta") -> np.ndarray:
        """(K+1, n, n, *w.shape) values of eta_k or of its w / conj(w) derivative."""
        evs = {"eta": self._ev, "dw": self._ev_dw, "dwbar": self._ev_dwb}[which]
        return np.stack([ev(w) for ev in evs])

    def field(self, w, z, which: str = "eta") -> np.ndarray:
        """Horner evaluation on broadcast (w, z) arrays; which in
        {eta, dw, dwbar, dz}."""
        w = np.asarray(w, dtype=complex)
        z = np.asarray(z, dtype=complex)
        if which == "dz":
            c = self.coeff_values(w)
            c = np.stack([k * c[k] for k in range(1, self.K + 1)]) if self.K else 0 * c
        else:
            c = self.coeff_values(w, which)
        shape = np.broadcast_shapes(w.shape, z.shape)
        out = np.zeros((self.dim, self.dim) + shape, dtype=complex)
        for k in range(c.shape[0] - 1, -1, -1):
            out = out * z + c[k]
        return out

    def __call__(self, w, z) -> np.ndarray:
        return self.field(w, z)

    def to_json(self) -> dict:
        return dict(self.source) if self.source else {
            "dim": self.dim, "xi0": self.a.tolist(), "mu": self.xi0.mu, "mode": self.mode,
            "type": "eta", "K": self.K,
            "coeffs": [[[str(e) for e in row] for row in c.tolist()] for c in self.coeffs]}

    # -- validation
    def validate(self, wnodes=None) -> None:
        self.check_parabolic()
        self.check_weights()
        self.check_based()
        if wnodes is not None:
            self.check_finite(wnodes)

    def check_parabolic(self) -> None:
        c = self.twist
        bad = (c < -1e-12) if self.mode == "permissive" else (np.abs(c) > 1e-12)
        if np.any(self.zero_pattern[0] & bad):
            kind = "parabolic subalgebra" if self.mode == "permissive" else "centraliser of xi0"
            raise MapError(f"eta(w, 0) is not in the {kind}")

    def check_weights(self) -> None:
        k = np.arange(self.K + 1)[:, None, None]
        if np.any(self.zero_pattern & (k + self.twist[None] < -1e-12)):
            raise MapError("a nonzero mode has negative twisted weight k + a_i - a_j")

    def check_based(self) -> None:
        alpha = np.exp(2j * np.pi * np.arange(16) / 16)
        r1, r2 = 1e3, 1e4
        m1 = np.max(np.abs(self.coeff_values(r1 * alpha)))
        m2 = np.max(np.abs(self.coeff_values(r2 * alpha)))
        if not np.isfinite(m1 + m2) or r2 * m2 > 2.0 * r1 * m1 + 1e-10:
            raise MapError("eta_k(w) does not decay like 1/|w| at infinity (map not based)")

    def check_finite(self, w) -> None:
        for which in ("eta", "dw", "dwbar"):
            with np.errstate(divide="ignore", invalid="ignore"):
                vals = self.coeff_values(w, which)
            if not np.all(np.isfinite(vals)):
                raise MapError("eta has a pole at a sample point of w")


def eta_eval(e: EtaField, w, z) -> np.ndarray:
    """eta(w, z) as an n x n matrix; w = inf (or None) gives 0."""
    if abs(z) > 1 + 1e-12:
        raise MapError("|z| must be at most 1")
    if w is None or np.isinf(w):
        return np.zeros((e.dim, e.dim), dtype=complex)
    return e.field(np.asarray(w), np.asarray(z))


def eta_eval_direct(e: EtaField, w, z) -> np.ndarray:
    c = e.coeff_values(np.asarray(w, dtype=complex))
    return sum(c[k] * z ** k for k in range(e.K + 1))


# ---------------------------------------------------------------------------
# blip maps f = (I - P) + z P, P = v v^* / |v|^2

@dataclass
class BlipMap:
    v: list
    xi0: LoopAlgebraElement

    def __post_init__(self):
        self.v = [parse_rational(x) if not isinstance(x, sp.Expr) else x for x in self.v]
        if len(self.v) != self.xi0.dim:
            raise MapError("v has wrong length")
        for x in self.v:
            if sp.diff(x, w_sym) != 0:
                raise MapError("v must depend on conj(w) only")

    def projector(self) -> sp.Matrix:
        v = sp.Matrix(self.v)
        vb = sp.Matrix([conj_expr(x) for x in self.v])
        norm2 = sum(v[i] * vb[i] for i in range(len(v)))
        return (v * vb.T) / norm2

    def projector_values(self, w) -> np.ndarray:
        return _lambdify_matrix(self.projector().tolist())(w)

    def loop_values(self, w, z) -> np.ndarray:
        P = self.projector_values(w)
        n = P.shape[0]
        I = np.eye(n).reshape((n, n) + (1,) * (P.ndim - 2))
        return (I - P) + np.asarray(z) * P


def eta_from_blip(b: BlipMap, mode: str = "strict") -> EtaField:
    """eta = (z - 1) dP/dconj(w)."""
    Q = sp.simplify(b.projector().diff(W_sym))
    src = {"dim": b.xi0.dim, "xi0": b.xi0.eigenvalues().tolist(), "mu": b.xi0.mu,
           "mode": mode, "type": "blip", "v": [str(x) for x in b.v]}
    return EtaField([-Q, Q], b.xi0, mode=mode, source=src)


def blip(v, a=None, mu: float = 1.0, mode: str = "strict") -> EtaField:
    a = np.zeros(len(v)) if a is None else np.asarray(a, dtype=float)
    return eta_from_blip(BlipMap(list(v), LoopAlgebraElement.from_eigenvalues(a, mu)), mode)


def zero_field(n: int = 2, a=None, mu: float = 1.0) -> EtaField:
    a = np.zeros(n) if a is None else np.asarray(a, dtype=float)
    return EtaField([sp.zeros(n, n)], LoopAlgebraElement.from_eigenvalues(a, mu))


def load_map(spec) -> EtaField:
    """Build an EtaField from a dict, JSON text, or a path to a JSON/YAML file."""
    if isinstance(spec, (str, Path)) and Path(spec).exists():
        text = Path(spec).read_text()
        if str(spec).endswith((".yaml", ".yml")):
            import yaml
            spec = yaml.safe_load(text)
        else:
            spec = json.loads(text)
    elif isinstance(spec, str):
        spec = json.loads(spec)
    spec = dict(spec)
    try:
        n = int(spec["dim"])
        a = np.asarray(spec.get("xi0", [0.0] * n), dtype=float)
        mu = float(spec.get("mu", 1.0))
        mode = spec.get("mode", "strict")
        kind = spec["type"]
    except (KeyError, TypeError, ValueError) as exc:
        raise MapError(f"malformed map spec: {exc}") from None
    if a.shape != (n,):
        raise MapError("xi0 must list n real numbers")
    xi0 = LoopAlgebraElement.from_eigenvalues(a, mu)
    if kind == "blip":
        e = eta_from_blip(BlipMap(list(spec["v"]), xi0), mode)
    elif kind == "eta":
        coeffs = []
        for c in spec["coeffs"]:
            if len(c) != n or any(len(row) != n for row in c):
                raise MapError("coefficient matrix has wrong shape")
            coeffs.append(sp.Matrix([[parse_rational(x) for x in row] for row in c]))
        if "K" in spec and int(spec["K"]) != len(coeffs) - 1:
            raise MapError("K disagrees with the number of coefficients")
        e = EtaField(coeffs, xi0, mode=mode, source=spec)
    else:
        raise MapError(f"unknown map type {kind!r}")
    e.validate()
    return e


# ---------------------------------------------------------------------------
# sphere quadrature and the degree integral

def sphere_nodes(nt: int, na: int):
    """Nodes w and weights for integrals d^2w over the plane (the sphere).

    Gauss-Legendre in t = cos(polar angle), trapezoid in the azimuth;
    d^2 w = (1 + |w|^2)^2 / 4 dt dalpha.
    """
    t, wt = np.polynomial.legendre.leggauss(nt)
    alpha = 2 * np.pi * np.arange(na) / na
    r = np.sqrt((1 - t) / (1 + t))
    w = r[:, None] * np.exp(1j * alpha)[None, :]
    weight = (wt[:, None] * (2 * np.pi / na)) * (1 + r[:, None] ** 2) ** 2 / 4
    return w, np.broadcast_to(weight, w.shape)


def loop_modes_on_circle(e: EtaField, w, ntheta: int | None = None) -> np.ndarray:
    """Fourier modes k = 0..K of eta(w, e^{i theta}) by FFT, shape (K+1, n, n, *w.shape)."""
    ntheta = ntheta or max(8, 2 * (e.K + 1))
    z = np.exp(2j * np.pi * np.arange(ntheta) / ntheta)
    vals = e.field(np.asarray(w)[..., None], z)
    modes = np.fft.fft(vals, axis=-1) / ntheta
    return np.moveaxis(modes[..., : e.K + 1], -1, 0)


def _degree_density(e: EtaField, w) -> np.ndarray:
    modes = loop_modes_on_circle(e, w)
    k = np.arange(e.K + 1).reshape((-1, 1, 1) + (1,) * np.ndim(w))
    c = e.twist.reshape((1,) + e.twist.shape + (1,) * np.ndim(w))
    return np.sum((k + c) * np.abs(modes) ** 2, axis=(0, 1, 2))


def sphere_integral(density, nt: int = 64, na: int = 64, tol: float = 1e-6,
                    max_nt: int = 512) -> tuple[float, float]:
    """Integrate density(w) d^2w over the plane with a doubling error estimate."""
    def once(nt, na):
        w, wt = sphere_nodes(nt, na)
        return float(np.sum(density(w) * wt))
    prev = once(nt, na)
    while True:
        nt, na = 2 * nt, 2 * na
        cur = once(nt, na)
        err = abs(cur - prev)
        if err <= tol * max(1.0, abs(cur)):
            return cur, err
        if nt > max_nt:
            raise QuadratureError(f"sphere quadrature not converged (estimate {err:.2e})")
        prev = cur


def degree(e: EtaField, nt: int = 64, na: int = 64, tol: float = 1e-6) -> tuple[float, float]:
    """(1/pi) int sum_{ij,k} (k + a_i - a_j) |eta_{ij,k}(w)|^2 d^2w, with error estimate."""
    if e.is_zero:
        return 0.0, 0.0
    val, err = sphere_integral(lambda w: _degree_density(e, w), nt, na, tol)
    return val / np.pi, err / np.pi


def rotate(e: EtaField, beta: float) -> EtaField:
    """Field of the map w -> f(e^{i beta} w)."""
    ph = sp.exp(sp.I * beta)
    sub = {w_sym: ph * w_sym, W_sym: sp.conjugate(ph) * W_sym}
    coeffs = [c.subs(sub, simultaneous=True) * sp.conjugate(ph) for c in e.coeffs]
    return EtaField(coeffs, e.xi0, e.mode)


def lattice_shift(e: EtaField, k) -> tuple[EtaField, LoopAlgebraElement]:
    """Conjugate by q = diag(z^{k_j}): eta_ij -> z^{k_j - k_i} eta_ij, a -> a + k."""
    k = np.asarray(k)
    if k.shape != (e.dim,) or not np.all(np.equal(np.round(k), k)):
        raise InvalidShift("shift must be an integer vector of length n")
    k = k.astype(int)
    n, K = e.dim, e.K
    shifts = k[None, :] - k[:, None]
    hi = K + max(0, int(shifts.max()))
    new = [sp.zeros(n, n) for _ in range(hi + 1)]
    for kk in range(K + 1):
        for i in range(n):
            for j in range(n):
                if not e.zero_pattern[kk, i, j]:
                    continue
                target = kk + shifts[i, j]
                if target < 0:
                    raise InvalidShift(f"entry ({i},{j}) acquires a pole z^{target}")
                new[target][i, j] = e.coeffs[kk][i, j]
    while len(new) > 1 and all(x == 0 for x in new[-1]):
        new.pop()
    xi1 = LoopAlgebraElement.from_eigenvalues(e.a + k, e.xi0.mu)
    try:
        out = EtaField(new, xi1, e.mode)
        out.check_weights()
        out.check_parabolic()
    except MapError as exc:
        raise InvalidShift(str(exc)) from None
    return out, xi1
