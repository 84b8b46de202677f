"""Loop-algebra orbit data: holonomy, canonical representatives, isotropy.

A loop xi(theta) = sum_k X_k e^{i k theta} is stored by its Fourier modes;
anti-Hermiticity of xi(theta) for real theta means X_{-k} = -X_k^*.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_STEPS = 2048
HOLONOMY_TOL = 1e-10
MAX_STEPS = 2 ** 16


class OrbitError(ValueError):
    pass


@dataclass(frozen=True)
class LoopAlgebraElement:
    modes: dict = field(default_factory=dict)
    mu: float = 1.0
    dim: int = 0

    def __post_init__(self):
        if not self.mu > 0:
            raise OrbitError("mu must be positive")
        modes = {int(k): np.asarray(v, dtype=complex) for k, v in self.modes.items()}
        dims = {m.shape for m in modes.values()}
        if len(dims) > 1:
            raise OrbitError("mode coefficients of different shapes")
        n = self.dim or (next(iter(dims))[0] if dims else 0)
        if n < 1:
            raise OrbitError("dimension unknown")
        for k, m in modes.items():
            if m.shape != (n, n):
                raise OrbitError(f"mode {k} has shape {m.shape}, expected {(n, n)}")
        for k, m in modes.items():
            partner = modes.get(-k, np.zeros((n, n)))
            if np.linalg.norm(partner + m.conj().T) > 1e-10 * max(1.0, np.linalg.norm(m)):
                raise OrbitError(f"modes {k}, {-k} do not give an anti-Hermitian loop")
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "dim", n)

    @classmethod
    def constant(cls, X, mu: float = 1.0) -> "LoopAlgebraElement":
        X = np.asarray(X, dtype=complex)
        return cls({0: X}, mu, X.shape[0])

    @classmethod
    def from_eigenvalues(cls, a, mu: float = 1.0) -> "LoopAlgebraElement":
        """Constant diagonal loop with i*xi = diag(a)."""
        return cls.constant(-1j * np.diag(np.asarray(a, dtype=float)), mu)

    @property
    def is_constant(self) -> bool:
        return all(k == 0 or not np.any(m) for k, m in self.modes.items())

    def mode(self, k: int) -> np.ndarray:
        return self.modes.get(k, np.zeros((self.dim, self.dim), dtype=complex))

    def __call__(self, theta):
        theta = np.asarray(theta, dtype=float)
        out = np.zeros(theta.shape + (self.dim, self.dim), dtype=complex)
        for k, m in self.modes.items():
            out += np.exp(1j * k * theta)[..., None, None] * m
        return out

    def eigenvalues(self) -> np.ndarray:
        """Real diagonal a of i*xi for a constant diagonal loop."""
        X = self.mode(0)
        if not self.is_constant or np.linalg.norm(X - np.diag(np.diag(X))) > 1e-12:
            raise OrbitError("not a constant diagonal loop; use orbit_canonical first")
        a = (1j * np.diag(X))
        if np.max(np.abs(a.imag), initial=0.0) > 1e-12:
            raise OrbitError("i*xi must be real diagonal")
        return a.real.copy()

    def to_json(self) -> dict:
        return {"mu": self.mu, "dim": self.dim,
                "modes": {str(k): [[[z.real, z.imag] for z in row] for row in m]
                          for k, m in sorted(self.modes.items())}}

    @classmethod
    def from_json(cls, d: dict) -> "LoopAlgebraElement":
        modes = {int(k): np.array([[complex(*z) for z in row] for row in m])
                 for k, m in d["modes"].items()}
        return cls(modes, float(d["mu"]), int(d["dim"]))


def _mul_modes(A: dict, B: dict) -> dict:
    out: dict = {}
    for k, a in A.items():
        for l, b in B.items():
            out[k + l] = out.get(k + l, 0) + a @ b
    return out


def twisted_bracket(X: LoopAlgebraElement, x: float, Y: LoopAlgebraElement, y: float):
    """[X + x d, Y + y d] = [X, Y] - y X' + x Y'; the d-component is zero."""
    if X.dim != Y.dim:
        raise OrbitError("dimension mismatch")
    XY, YX = _mul_modes(X.modes, Y.modes), _mul_modes(Y.modes, X.modes)
    modes = {k: XY.get(k, 0) - YX.get(k, 0) for k in set(XY) | set(YX)}
    for k, m in X.modes.items():
        modes[k] = modes.get(k, 0) - y * 1j * k * m
    for k, m in Y.modes.items():
        modes[k] = modes.get(k, 0) + x * 1j * k * m
    modes = {k: np.asarray(m, dtype=complex) for k, m in modes.items()}
    return LoopAlgebraElement(modes, X.mu, X.dim), 0.0


def _rk4_path(xi: LoopAlgebraElement, steps: int) -> np.ndarray:
    """h(theta_k), k=0..steps, for h' = -xi h / mu, h(0) = I."""
    h = 2 * np.pi / steps
    th = np.arange(steps + 1) * h
    half = xi(th[:-1] + h / 2)
    node = xi(th)
    c = -1.0 / xi.mu
    H = np.empty((steps + 1, xi.dim, xi.dim), dtype=complex)
    cur = np.eye(xi.dim, dtype=complex)
    H[0] = cur
    for k in range(steps):
        k1 = c * node[k] @ cur
        k2 = c * half[k] @ (cur + h / 2 * k1)
        k3 = c * half[k] @ (cur + h / 2 * k2)
        k4 = c * node[k + 1] @ (cur + h * k3)
        cur = cur + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        H[k + 1] = cur
    return H


def holonomy_path(xi: LoopAlgebraElement, steps: int = DEFAULT_STEPS,
                  tol: float = HOLONOMY_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Solution h on the uniform theta grid; steps double until the
    halving estimate of the end-point error is below tol."""
    while True:
        fine = _rk4_path(xi, steps)
        coarse = _rk4_path(xi, steps // 2)
        err = np.linalg.norm(fine[-1] - coarse[-1]) / 15.0
        if err <= tol:
            return np.linspace(0, 2 * np.pi, steps + 1), fine
        steps *= 2
        if steps > MAX_STEPS:
            raise OrbitError(f"holonomy did not reach tolerance {tol} (estimate {err:.2e})")


def holonomy(xi: LoopAlgebraElement, steps: int = DEFAULT_STEPS) -> np.ndarray:
    """Monodromy M = h(2 pi) with h(0) = I."""
    return holonomy_path(xi, steps)[1][-1]


def eigenphase_window(M: np.ndarray, mu: float) -> np.ndarray:
    """a_j = mu * arg(lambda_j) / 2 pi in (-mu/2, mu/2], original order."""
    ang = np.angle(np.linalg.eigvals(M))
    ang = np.where(ang <= -np.pi + 1e-12, np.pi, ang)
    return mu * ang / (2 * np.pi)


def orbit_canonical(xi: LoopAlgebraElement) -> LoopAlgebraElement:
    """Constant diagonal representative with exp(-2 pi xi0 / mu) ~ M_xi."""
    a = eigenphase_window(holonomy(xi), xi.mu)
    a = a[np.argsort(-a, kind="stable")]
    return LoopAlgebraElement.from_eigenvalues(a, xi.mu)


def loop_modes_adjoint(g: dict) -> dict:
    return {-k: np.asarray(m, dtype=complex).conj().T for k, m in g.items()}


def gauge_act(gamma: dict, xi: LoopAlgebraElement) -> LoopAlgebraElement:
    """gamma . xi = gamma xi gamma^{-1} - mu gamma' gamma^{-1} for a unitary
    Laurent-polynomial loop gamma given by its modes."""
    ginv = loop_modes_adjoint(gamma)
    conj = _mul_modes(_mul_modes(gamma, xi.modes), ginv)
    deriv = _mul_modes({k: 1j * k * np.asarray(m) for k, m in gamma.items()}, ginv)
    modes = {}
    for k in set(conj) | set(deriv):
        m = conj.get(k, 0) - xi.mu * deriv.get(k, 0)
        if np.any(np.abs(m) > 1e-15):
            modes[k] = m
    if not modes:
        modes = {0: np.zeros((xi.dim, xi.dim))}
    return LoopAlgebraElement(modes, xi.mu, xi.dim)


def isotropy_check(gamma: np.ndarray, xi: LoopAlgebraElement, steps: int = DEFAULT_STEPS,
                   tol: float = 1e-8) -> bool:
    """gamma sampled at theta_k = 2 pi k / steps (optionally including 2 pi)."""
    gamma = np.asarray(gamma, dtype=complex)
    if gamma.shape[0] not in (steps, steps + 1) or gamma.shape[1:] != (xi.dim, xi.dim):
        raise OrbitError(f"gamma must be sampled on the {steps}-step holonomy grid")
    path = _rk4_path(xi, steps)
    h = path[: gamma.shape[0]]
    M = path[-1]
    g0 = gamma[0]
    scale = max(1.0, np.linalg.norm(g0))
    if np.linalg.norm(M @ g0 - g0 @ M) > tol * scale * max(1.0, np.linalg.norm(M)):
        return False
    pred = h @ g0 @ np.linalg.inv(h)
    return bool(np.max(np.linalg.norm(gamma - pred, axis=(1, 2))) <= tol * scale)
