"""Fused numba kernels for the n = 2 flow (the common case).

A 2x2 matrix is carried as four complex scalars (a, b, c, d) = [[a, b], [c, d]].
The numpy implementation in hymflow is the reference; tests check agreement.
"""
from __future__ import annotations

import math

import numba as nb
import numpy as np

_jit = nb.njit(cache=True, fastmath=False, nogil=True)
_inl = nb.njit(cache=True, inline="always")


@_inl
def mul(a0, b0, c0, d0, a1, b1, c1, d1):
    return (a0 * a1 + b0 * c1, a0 * b1 + b0 * d1, c0 * a1 + d0 * c1, c0 * b1 + d0 * d1)


@_inl
def inv(a, b, c, d):
    r = 1.0 / (a * d - b * c)
    return d * r, -b * r, -c * r, a * r


@_inl
def adj(a, b, c, d):
    return a.conjugate(), c.conjugate(), b.conjugate(), d.conjugate()


@_inl
def chol_inv(a, b, c, d):
    """Lower Cholesky factor L of a Hermitian PD matrix and L^{-1}."""
    l00 = math.sqrt(a.real)
    l10 = c / l00
    l11 = math.sqrt(d.real - (l10.real * l10.real + l10.imag * l10.imag))
    i00 = 1.0 / l00
    i11 = 1.0 / l11
    i10 = -l10 * i00 * i11
    return l00, l10, l11, i00, i10, i11


@_inl
def congruence_lower(i00, i10, i11, a, b, c, d):
    """Li X Li^* for lower-triangular Li = [[i00, 0], [i10, i11]] (real diagonal)."""
    # Li X
    p00 = i00 * a
    p01 = i00 * b
    p10 = i10 * a + i11 * c
    p11 = i10 * b + i11 * d
    # (Li X) Li^*, Li^* = [[i00, conj(i10)], [0, i11]]
    ci10 = i10.conjugate()
    return (p00 * i00, p00 * ci10 + p01 * i11, p10 * i00, p10 * ci10 + p11 * i11)


@_inl
def herm_func_coeffs_log(k00, k01, k11):
    m = 0.5 * (k00 + k11)
    dd = 0.5 * (k00 - k11)
    r = math.sqrt(dd * dd + k01.real * k01.real + k01.imag * k01.imag)
    det = k00 * k11 - (k01.real * k01.real + k01.imag * k01.imag)
    avg = 0.5 * math.log(det)
    x = r / m
    if x < 1e-4:
        s = (1.0 + x * x / 3.0) / m
    else:
        s = math.atanh(x) / x / m
    return avg, s, dd


@_inl
def herm_func_coeffs_exp(k00, k01, k11):
    m = 0.5 * (k00 + k11)
    dd = 0.5 * (k00 - k11)
    r = math.sqrt(dd * dd + k01.real * k01.real + k01.imag * k01.imag)
    em = math.exp(m)
    c = em * math.cosh(r)
    if r < 1e-4:
        s = em * (1.0 + r * r / 6.0)
    else:
        s = em * math.sinh(r) / r
    return c, s, dd


@_inl
def log_rel(a0, b0, c0, d0, a1, b1, c1, d1):
    """log(H0^{-1} H1) for Hermitian PD H0, H1."""
    l00, l10, l11, i00, i10, i11 = chol_inv(a0, b0, c0, d0)
    k00, k01, k10, k11 = congruence_lower(i00, i10, i11, a1, b1, c1, d1)
    avg, s, dd = herm_func_coeffs_log(k00.real, 0.5 * (k01 + k10.conjugate()), k11.real)
    kb = s * 0.5 * (k01 + k10.conjugate())
    g00 = avg + s * dd
    g11 = avg - s * dd
    g01 = kb
    g10 = kb.conjugate()
    # Li^* G L^*; Li^* = [[i00, conj(i10)], [0, i11]], L^* = [[l00, conj(l10)], [0, l11]]
    ci10 = i10.conjugate()
    q00 = i00 * g00 + ci10 * g10
    q01 = i00 * g01 + ci10 * g11
    q10 = i11 * g10
    q11 = i11 * g11
    cl10 = l10.conjugate()
    return (q00 * l00, q00 * cl10 + q01 * l11, q10 * l00, q10 * cl10 + q11 * l11)


@_inl
def flux(a0, b0, c0, d0, a1, b1, c1, d1, rh):
    """((H0 + H1)/2)^{-1} (H1 - H0) / h for Hermitian H0, H1; rh = 1/h."""
    ma, mb, mc, md = 0.5 * (a0 + a1), 0.5 * (b0 + b1), 0.5 * (c0 + c1), 0.5 * (d0 + d1)
    r = rh / (ma.real * md.real - (mb.real * mb.real + mb.imag * mb.imag))
    da, db, dc, dd = a1 - a0, b1 - b0, c1 - c0, d1 - d0
    return ((md * da - mb * dc) * r, (md * db - mb * dd) * r,
            (ma * dc - mc * da) * r, (ma * dd - mc * db) * r)


@_jit
def edge_fluxes(H, Ex, Ey, Eu, Ep, rx, ry, ru, rphi):
    """Edge values of A along each axis for the interior stencil.

    Ex: (2, 2, nx-1, ny-2, nu-2, np), Ey: (.., nx-2, ny-1, ..),
    Eu: (.., nx-2, ny-2, nu-1, np), Ep: (.., nx-2, ny-2, nu-2, np) (edge l -> l+1).
    """
    nx, ny, nu, npp = H.shape[2], H.shape[3], H.shape[4], H.shape[5]
    for i in range(nx - 1):
        for j in range(1, ny - 1):
            for k in range(1, nu - 1):
                for l in range(npp):
                    e = flux(H[0, 0, i, j, k, l], H[0, 1, i, j, k, l], H[1, 0, i, j, k, l], H[1, 1, i, j, k, l],
                             H[0, 0, i + 1, j, k, l], H[0, 1, i + 1, j, k, l], H[1, 0, i + 1, j, k, l], H[1, 1, i + 1, j, k, l], rx[i])
                    Ex[0, 0, i, j - 1, k - 1, l], Ex[0, 1, i, j - 1, k - 1, l], Ex[1, 0, i, j - 1, k - 1, l], Ex[1, 1, i, j - 1, k - 1, l] = e
    for i in range(1, nx - 1):
        for j in range(ny - 1):
            for k in range(1, nu - 1):
                for l in range(npp):
                    e = flux(H[0, 0, i, j, k, l], H[0, 1, i, j, k, l], H[1, 0, i, j, k, l], H[1, 1, i, j, k, l],
                             H[0, 0, i, j + 1, k, l], H[0, 1, i, j + 1, k, l], H[1, 0, i, j + 1, k, l], H[1, 1, i, j + 1, k, l], ry[j])
                    Ey[0, 0, i - 1, j, k - 1, l], Ey[0, 1, i - 1, j, k - 1, l], Ey[1, 0, i - 1, j, k - 1, l], Ey[1, 1, i - 1, j, k - 1, l] = e
    for i in range(1, nx - 1):
        for j in range(1, ny - 1):
            for k in range(nu - 1):
                for l in range(npp):
                    e = log_rel(H[0, 0, i, j, k, l], H[0, 1, i, j, k, l], H[1, 0, i, j, k, l], H[1, 1, i, j, k, l],
                                H[0, 0, i, j, k + 1, l], H[0, 1, i, j, k + 1, l], H[1, 0, i, j, k + 1, l], H[1, 1, i, j, k + 1, l])
                    r = ru[k]
                    Eu[0, 0, i - 1, j - 1, k, l] = e[0] * r
                    Eu[0, 1, i - 1, j - 1, k, l] = e[1] * r
                    Eu[1, 0, i - 1, j - 1, k, l] = e[2] * r
                    Eu[1, 1, i - 1, j - 1, k, l] = e[3] * r
                for l in range(npp):
                    lp = l + 1 if l < npp - 1 else 0
                    if k == 0:
                        continue
                    e = flux(H[0, 0, i, j, k, l], H[0, 1, i, j, k, l], H[1, 0, i, j, k, l], H[1, 1, i, j, k, l],
                             H[0, 0, i, j, k, lp], H[0, 1, i, j, k, lp], H[1, 0, i, j, k, lp], H[1, 1, i, j, k, lp], rphi)
                    Ep[0, 0, i - 1, j - 1, k - 1, l], Ep[0, 1, i - 1, j - 1, k - 1, l], Ep[1, 0, i - 1, j - 1, k - 1, l], Ep[1, 1, i - 1, j - 1, k - 1, l] = e


@_jit
def assemble_n2(H, Ex, Ey, Eu, Ep, eta, deta, cz, cw, ex, ey, eu, rphi, out):
    """B on interior nodes from edge fluxes. eta/deta may have zero size (eta = 0)."""
    nx, ny, nu, npp = H.shape[2], H.shape[3], H.shape[4], H.shape[5]
    use_eta = eta.shape[2] > 0
    for ii in range(nx - 2):
        hxm, hxp = ex[ii], ex[ii + 1]
        rdx = 2.0 / (hxm + hxp)
        wxm, wxp = hxp / (hxm + hxp), hxm / (hxm + hxp)
        for jj in range(ny - 2):
            hym, hyp = ey[jj], ey[jj + 1]
            rdy = 2.0 / (hym + hyp)
            wym, wyp = hyp / (hym + hyp), hym / (hym + hyp)
            cwij = cw[ii, jj]
            for kk in range(nu - 2):
                hum, hup = eu[kk], eu[kk + 1]
                rdu = 2.0 / (hum + hup)
                wum, wup = hup / (hum + hup), hum / (hum + hup)
                czk = cz[kk]
                for l in range(npp):
                    lm = l - 1 if l > 0 else npp - 1
                    i, j, k = ii + 1, jj + 1, kk + 1
                    # divergence and node average per axis
                    m0, m1, m2, m3 = Ex[0, 0, ii, jj, kk, l], Ex[0, 1, ii, jj, kk, l], Ex[1, 0, ii, jj, kk, l], Ex[1, 1, ii, jj, kk, l]
                    p0, p1, p2, p3 = Ex[0, 0, i, jj, kk, l], Ex[0, 1, i, jj, kk, l], Ex[1, 0, i, jj, kk, l], Ex[1, 1, i, jj, kk, l]
                    dx0, dx1, dx2, dx3 = (p0 - m0) * rdx, (p1 - m1) * rdx, (p2 - m2) * rdx, (p3 - m3) * rdx
                    ax0, ax1, ax2, ax3 = wxp * p0 + wxm * m0, wxp * p1 + wxm * m1, wxp * p2 + wxm * m2, wxp * p3 + wxm * m3
                    m0, m1, m2, m3 = Ey[0, 0, ii, jj, kk, l], Ey[0, 1, ii, jj, kk, l], Ey[1, 0, ii, jj, kk, l], Ey[1, 1, ii, jj, kk, l]
                    p0, p1, p2, p3 = Ey[0, 0, ii, j, kk, l], Ey[0, 1, ii, j, kk, l], Ey[1, 0, ii, j, kk, l], Ey[1, 1, ii, j, kk, l]
                    dy0, dy1, dy2, dy3 = (p0 - m0) * rdy, (p1 - m1) * rdy, (p2 - m2) * rdy, (p3 - m3) * rdy
                    ay0, ay1, ay2, ay3 = wyp * p0 + wym * m0, wyp * p1 + wym * m1, wyp * p2 + wym * m2, wyp * p3 + wym * m3
                    m0, m1, m2, m3 = Eu[0, 0, ii, jj, kk, l], Eu[0, 1, ii, jj, kk, l], Eu[1, 0, ii, jj, kk, l], Eu[1, 1, ii, jj, kk, l]
                    p0, p1, p2, p3 = Eu[0, 0, ii, jj, k, l], Eu[0, 1, ii, jj, k, l], Eu[1, 0, ii, jj, k, l], Eu[1, 1, ii, jj, k, l]
                    du0, du1, du2, du3 = (p0 - m0) * rdu, (p1 - m1) * rdu, (p2 - m2) * rdu, (p3 - m3) * rdu
                    au0, au1, au2, au3 = wup * p0 + wum * m0, wup * p1 + wum * m1, wup * p2 + wum * m2, wup * p3 + wum * m3
                    m0, m1, m2, m3 = Ep[0, 0, ii, jj, kk, lm], Ep[0, 1, ii, jj, kk, lm], Ep[1, 0, ii, jj, kk, lm], Ep[1, 1, ii, jj, kk, lm]
                    p0, p1, p2, p3 = Ep[0, 0, ii, jj, kk, l], Ep[0, 1, ii, jj, kk, l], Ep[1, 0, ii, jj, kk, l], Ep[1, 1, ii, jj, kk, l]
                    dp0, dp1, dp2, dp3 = (p0 - m0) * rphi, (p1 - m1) * rphi, (p2 - m2) * rphi, (p3 - m3) * rphi
                    ap0, ap1, ap2, ap3 = 0.5 * (p0 + m0), 0.5 * (p1 + m1), 0.5 * (p2 + m2), 0.5 * (p3 + m3)
                    # z part: cz (div_u + div_phi + i [A_u, A_phi])
                    p = mul(au0, au1, au2, au3, ap0, ap1, ap2, ap3)
                    q = mul(ap0, ap1, ap2, ap3, au0, au1, au2, au3)
                    z0 = czk * (du0 + dp0 + 1j * (p[0] - q[0]))
                    z1 = czk * (du1 + dp1 + 1j * (p[1] - q[1]))
                    z2 = czk * (du2 + dp2 + 1j * (p[2] - q[2]))
                    z3 = czk * (du3 + dp3 + 1j * (p[3] - q[3]))
                    # w part
                    p = mul(ax0, ax1, ax2, ax3, ay0, ay1, ay2, ay3)
                    q = mul(ay0, ay1, ay2, ay3, ax0, ax1, ax2, ax3)
                    w0 = 0.25 * (dx0 + dy0 + 1j * (p[0] - q[0]))
                    w1 = 0.25 * (dx1 + dy1 + 1j * (p[1] - q[1]))
                    w2 = 0.25 * (dx2 + dy2 + 1j * (p[2] - q[2]))
                    w3 = 0.25 * (dx3 + dy3 + 1j * (p[3] - q[3]))
                    if use_eta:
                        a, b, c, d = H[0, 0, i, j, k, l], H[0, 1, i, j, k, l], H[1, 0, i, j, k, l], H[1, 1, i, j, k, l]
                        n0, n1, n2, n3 = eta[0, 0, ii, jj, kk, l], eta[0, 1, ii, jj, kk, l], eta[1, 0, ii, jj, kk, l], eta[1, 1, ii, jj, kk, l]
                        g0, g1, g2, g3 = deta[0, 0, ii, jj, kk, l], deta[0, 1, ii, jj, kk, l], deta[1, 0, ii, jj, kk, l], deta[1, 1, ii, jj, kk, l]
                        rdet = 1.0 / (a.real * d.real - (b.real * b.real + b.imag * b.imag))
                        hi0, hi1, hi2, hi3 = d * rdet, -b * rdet, -c * rdet, a * rdet
                        na = adj(n0, n1, n2, n3)
                        t = mul(hi0, hi1, hi2, hi3, na[0], na[1], na[2], na[3])
                        M = mul(t[0], t[1], t[2], t[3], a, b, c, d)
                        ga = adj(g0, g1, g2, g3)
                        t = mul(hi0, hi1, hi2, hi3, ga[0], ga[1], ga[2], ga[3])
                        G = mul(t[0], t[1], t[2], t[3], a, b, c, d)
                        awb0, awb1, awb2, awb3 = 0.5 * (ax0 + 1j * ay0), 0.5 * (ax1 + 1j * ay1), 0.5 * (ax2 + 1j * ay2), 0.5 * (ax3 + 1j * ay3)
                        aw0, aw1, aw2, aw3 = 0.5 * (ax0 - 1j * ay0), 0.5 * (ax1 - 1j * ay1), 0.5 * (ax2 - 1j * ay2), 0.5 * (ax3 - 1j * ay3)
                        p = mul(M[0], M[1], M[2], M[3], awb0, awb1, awb2, awb3)
                        q = mul(awb0, awb1, awb2, awb3, M[0], M[1], M[2], M[3])
                        x0, x1, x2, x3 = aw0 - M[0], aw1 - M[1], aw2 - M[2], aw3 - M[3]
                        r = mul(n0, n1, n2, n3, x0, x1, x2, x3)
                        s = mul(x0, x1, x2, x3, n0, n1, n2, n3)
                        w0 += -(p[0] - q[0]) - G[0] - g0 + (r[0] - s[0])
                        w1 += -(p[1] - q[1]) - G[1] - g1 + (r[1] - s[1])
                        w2 += -(p[2] - q[2]) - G[2] - g2 + (r[2] - s[2])
                        w3 += -(p[3] - q[3]) - G[3] - g3 + (r[3] - s[3])
                    out[0, 0, ii, jj, kk, l] = z0 + cwij * w0
                    out[0, 1, ii, jj, kk, l] = z1 + cwij * w1
                    out[1, 0, ii, jj, kk, l] = z2 + cwij * w2
                    out[1, 1, ii, jj, kk, l] = z3 + cwij * w3


class TensorN2:
    """Scratch buffers and geometry for the n = 2 kernels on one grid."""

    def __init__(self, shape, ex, ey, eu, hphi, cz, cw, eta=None, deta=None):
        nx, ny, nu, npp = shape
        self.Ex = np.empty((2, 2, nx - 1, ny - 2, nu - 2, npp), dtype=complex)
        self.Ey = np.empty((2, 2, nx - 2, ny - 1, nu - 2, npp), dtype=complex)
        self.Eu = np.empty((2, 2, nx - 2, ny - 2, nu - 1, npp), dtype=complex)
        self.Ep = np.empty((2, 2, nx - 2, ny - 2, nu - 2, npp), dtype=complex)
        self.ex, self.ey, self.eu = (np.ascontiguousarray(v, dtype=float) for v in (ex, ey, eu))
        self.r = (1.0 / self.ex, 1.0 / self.ey, 1.0 / self.eu, 1.0 / hphi)
        self.cz = np.ascontiguousarray(cz, dtype=float)
        self.cw = np.ascontiguousarray(cw, dtype=float)
        empty = np.zeros((2, 2, 0, 0, 0, 0), dtype=complex)
        self.eta = empty if eta is None else np.ascontiguousarray(eta)
        self.deta = empty if deta is None else np.ascontiguousarray(deta)

    def tensor(self, H, out=None):
        if out is None:
            out = np.empty_like(self.Ep)
        rx, ry, ru, rphi = self.r
        edge_fluxes(H, self.Ex, self.Ey, self.Eu, self.Ep, rx, ry, ru, rphi)
        assemble_n2(H, self.Ex, self.Ey, self.Eu, self.Ep, self.eta, self.deta,
                    self.cz, self.cw, self.ex, self.ey, self.eu, rphi, out)
        return out


@_jit
def step_n2(H, B, dt, Hout, norm2):
    """Hout[interior] = L exp(dt L^{-1} S L^{-*}) L^*, S = herm(H B);
    norm2 = tr(B_s^2) with B_s = H^{-1} S."""
    nx, ny, nu, npp = H.shape[2], H.shape[3], H.shape[4], H.shape[5]
    for i in range(1, nx - 1):
        for j in range(1, ny - 1):
            for k in range(1, nu - 1):
                for l in range(npp):
                    ii, jj, kk = i - 1, j - 1, k - 1
                    a, b, c, d = H[0, 0, i, j, k, l], H[0, 1, i, j, k, l], H[1, 0, i, j, k, l], H[1, 1, i, j, k, l]
                    p = mul(a, b, c, d, B[0, 0, ii, jj, kk, l], B[0, 1, ii, jj, kk, l], B[1, 0, ii, jj, kk, l], B[1, 1, ii, jj, kk, l])
                    s00 = p[0].real
                    s11 = p[3].real
                    s01 = 0.5 * (p[1] + p[2].conjugate())
                    hi = inv(a, b, c, d)
                    bs = mul(hi[0], hi[1], hi[2], hi[3], s00 + 0j, s01, s01.conjugate(), s11 + 0j)
                    sq = mul(bs[0], bs[1], bs[2], bs[3], bs[0], bs[1], bs[2], bs[3])
                    norm2[ii, jj, kk, l] = max((sq[0] + sq[3]).real, 0.0)
                    l00, l10, l11, i00, i10, i11 = chol_inv(a, b, c, d)
                    K = congruence_lower(i00, i10, i11, s00 + 0j, s01, s01.conjugate(), s11 + 0j)
                    c_, s_, dd = herm_func_coeffs_exp(dt * K[0].real, dt * 0.5 * (K[1] + K[2].conjugate()), dt * K[3].real)
                    kb = s_ * dt * 0.5 * (K[1] + K[2].conjugate())
                    e00 = c_ + s_ * dd
                    e11 = c_ - s_ * dd
                    # L E L^*, L = [[l00, 0], [l10, l11]]
                    q00 = l00 * e00
                    q01 = l00 * kb
                    q10 = l10 * e00 + l11 * kb.conjugate()
                    q11 = l10 * kb + l11 * e11
                    cl10 = l10.conjugate()
                    h00 = (q00 * l00).real
                    h01 = q00 * cl10 + q01 * l11
                    h10 = q10 * l00
                    h11 = (q10 * cl10 + q11 * l11).real
                    off = 0.5 * (h01 + h10.conjugate())
                    Hout[0, 0, i, j, k, l] = h00
                    Hout[0, 1, i, j, k, l] = off
                    Hout[1, 0, i, j, k, l] = off.conjugate()
                    Hout[1, 1, i, j, k, l] = h11
