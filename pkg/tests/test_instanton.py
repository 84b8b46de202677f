import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from caloron import holomap as hm
from caloron import hymflow as hf
from caloron import instanton as ins
from caloron import matrixcore as mc
from caloron.geometry import ProductGrid

SMALL = ProductGrid(nx=7, ny=7, nu=9, nphi=8, R_w=2.0, eps=float(np.exp(-2)), delta=0.875)


@pytest.fixture(scope="module")
def blip1():
    return hm.blip(["1", "W"])


@pytest.fixture(scope="module")
def converged(blip1):
    H, d = hf.run_flow(blip1, SMALL, hf.FlowConfig(check_every=50))
    assert d.converged
    return H


def test_trivial_connections():
    e = hm.zero_field(2)
    H = hf.HermitianMetricField(SMALL, mc.beye(2, SMALL.shape))
    A = ins.connection_from_pair(H, e)
    for X in (A.Aw, A.Awb, A.Az, A.Azb):
        assert np.max(np.abs(X)) < 1e-14
    F = ins.curvature(A)
    assert all(np.max(np.abs(X)) < 1e-12 for X in F.F.values())
    assert abs(ins.energy(F, e)["lhs"]) < 1e-20


@given(st.floats(-0.45, 0.45))
@settings(max_examples=10)
def test_abelian_diagonal_connection_is_flat(a):
    e = hm.zero_field(2, [a, -a])
    H = hf.initial_metric(e.xi0, SMALL)
    A = ins.connection_from_pair(H, e)
    I = (slice(None), slice(None)) + SMALL.interior
    ref = np.broadcast_to(np.diag([a, -a]).reshape(2, 2, 1, 1, 1, 1) / SMALL.Z, A.Az.shape)
    assert np.allclose(A.Az[I], ref[I], atol=1e-12)
    F = ins.curvature(A)
    assert max(np.max(np.abs(X)) for X in F.F.values()) < 1e-9


def test_pair_connection_matches_closed_form(blip1):
    e = hm.blip(["1", "W"], a=[0.2, -0.2], mode="permissive")
    H = hf.initial_metric(e.xi0, SMALL)
    A1 = ins.connection_from_pair(H, e)
    A2 = ins.approx_connection(e.xi0, e, SMALL)
    for name in ("Aw", "Awb", "Az", "Azb"):
        assert np.max(np.abs(getattr(A1, name) - getattr(A2, name))) <= 1e-12


def test_conjugation_weights(blip1):
    e = hm.blip(["1", "W"], a=[0.2, -0.2], mode="permissive")
    A = ins.approx_connection(e.xi0, e, SMALL)
    eta = e.field(SMALL.W, SMALL.Z)
    # entry (0, 1) of H^{-1} eta^* H scales as |z|^{2(a_1 - a_0)} = |z|^{-0.8}
    ratio = -A.Aw[0, 1] / np.conj(eta[1, 0])
    assert np.allclose(ratio, np.abs(SMALL.Z) ** -0.8 * np.ones(SMALL.shape))


def test_unitarity_on_unit_circle(blip1):
    g = SMALL.with_(delta=1 - 1e-12)
    A = ins.approx_connection(blip1.xi0, blip1, g)
    ring = (slice(None), slice(None), slice(None), slice(None), -1)
    assert np.allclose(A.Aw[ring], -mc.badj(A.Awb)[ring], atol=1e-10)


def test_curvature_B_equals_flow_B_at_initial_data(blip1):
    H = hf.initial_metric(blip1.xi0, SMALL)
    F = ins.curvature(ins.connection_from_pair(H, blip1))
    assert ins.asd_crosscheck(F, H, blip1) <= 1e-10
    assert F.unitarity_defect() <= 1e-10


def test_curvature_antisymmetric_components(blip1, converged):
    F = ins.curvature(ins.connection_from_pair(converged, blip1))
    assert np.array_equal(F.component("z", "wb"), -F.F["wbz"])
    assert np.all(F.component("w", "w") == 0)


def test_bianchi_and_consistency_improve_with_refinement():
    # smooth non-trivial metric, no flow: |B_curv - B_flow| is a pure discretisation error
    e = hm.blip(["1", "W"])
    errs = []
    base = ProductGrid(nx=9, ny=9, nu=13, nphi=12, R_w=1.0, eps=float(np.exp(-1)), delta=0.8)
    for g in (base, base.refined()):
        bump = (np.cos(g.W.real) * np.cos(g.W.imag) * (1 + 0.3 * np.cos(g.PHI)) * np.sin(g.U))
        K = np.zeros((2, 2) + g.shape, dtype=complex)
        K[0, 0], K[1, 1] = bump, -bump
        K[0, 1] = 0.3 * bump
        K[1, 0] = 0.3 * bump
        H = hf.HermitianMetricField(g, mc.bexp_herm(0.5 * K))
        F = ins.curvature(ins.connection_from_pair(H, e))
        errs.append(ins.asd_crosscheck(F, H, e, margin=2 * (1 + (g is not base))))
    assert errs[1] < errs[0] / 2.5


def test_converged_residual_and_crosscheck(blip1, converged):
    F = ins.curvature(ins.connection_from_pair(converged, blip1))
    res = ins.asd_residual(F, margin=1)
    assert res["sup"] > 0 and res["L2"] > 0
    assert ins.asd_residual(F, 2)["sup"] <= res["sup"]


def test_tr_f_wedge_f_gauge_invariant(blip1, converged, rng):
    F = ins.curvature(ins.connection_from_pair(converged, blip1))
    # random smooth unitary gauge in a unitary frame, applied to the sampled curvature
    G = ins._unitary_frame(converged.values)
    Gi = mc.binv(G)
    Fu = {k: mc.bmul(mc.bmul(G, X), Gi) for k, X in F.F.items()}
    g = SMALL
    X = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    X = (X - X.conj().T) / 2
    phase = np.sin(g.W.real) * np.cos(g.U) + 0.2 * np.cos(g.PHI)
    U = ins._expm_anti(X.reshape(2, 2, 1, 1, 1, 1) * phase)
    Ui = mc.badj(U)
    Fg = {k: mc.bmul(mc.bmul(U, Y), Ui) for k, Y in Fu.items()}
    t0 = ins.CurvatureSample(g, Fu, None).top_density()
    t1 = ins.CurvatureSample(g, Fg, None).top_density()
    assert np.max(np.abs(t1 - t0)) <= 1e-10 * max(1.0, np.max(np.abs(t0)))


@pytest.mark.parametrize("v,k", [(["1", "W"], 1.0), (["1", "W^2"], 2.0)])
def test_charge_equals_degree(v, k):
    e = hm.blip(v)
    q, qe = ins.charge(e)
    d, de = hm.degree(e)
    assert abs(q - k) <= 1e-2 and abs(d - k) <= 1e-2 and abs(q - d) <= 2e-2


def test_charge_zero_and_report(blip1):
    assert ins.charge(hm.zero_field(2)) == (0.0, 0.0)
    r = ins.charge_report(blip1, 4.0)
    assert r["charge_R"] < r["charge_2R"] < r["charge"] + 1e-6
    assert abs(r["charge"] - 1) < 1e-5


def test_shifted_charge_matches_shifted_degree(blip1):
    s, _ = hm.lattice_shift(blip1, [1, 1])
    assert abs(ins.charge(s)[0] - hm.degree(s)[0]) < 2e-2


def test_charge_on_domain_limits(blip1):
    # growing domains approach the full charge
    small = ins.charge_on_domain(blip1, SMALL)
    big = ins.charge_on_domain(blip1, ProductGrid(R_w=50.0, eps=1e-12, delta=1 - 1e-9))
    assert 0 < small < big and abs(big - 1) < 1e-3


def test_energy_routes_agree_on_initial_data(blip1):
    H = hf.initial_metric(blip1.xi0, SMALL)
    A = ins.connection_from_pair(H, blip1)
    F = ins.curvature(A)
    en = ins.energy(F, blip1, A)
    assert en["route"] == "boundary"
    # boundary and closed-form evaluations of int tr(F ^ F) for the approximate connection
    assert abs(en["top_boundary"] - en["top_eta"]) / en["top_eta"] < 0.1
    # the bulk route carries O(h^2) error, large on this coarse grid
    assert abs(en["top_curvature"] - en["top_eta"]) / en["top_eta"] < 0.2
    assert en["lhs"] > 0 and np.isfinite(en["lhs"])


def test_chern_simons_boundary_is_stokes_exact_for_pure_gauge():
    # A = -dU U^{-1} for a smooth unitary U: F = 0 in the continuum
    g = ProductGrid(nx=9, ny=9, nu=11, nphi=8, R_w=1.0, eps=float(np.exp(-1)), delta=0.8)
    X = np.array([[0.3j, 0.2], [-0.2, -0.3j]])
    U = ins._expm_anti(X.reshape(2, 2, 1, 1, 1, 1) * (g.W.real + 0 * g.U))
    dU = ins._d(U, g, 0)
    Ax = -mc.bmul(dU, mc.badj(U))
    zero = np.zeros_like(Ax)
    A = ins.ConnectionField(g, 0.5 * Ax, 0.5 * Ax, zero, zero, "radial", None)
    assert abs(ins.chern_simons_boundary(A)) < 1e-10


def test_caloron_fields_trivial():
    e = hm.zero_field(2, [0.2, -0.2])
    H = hf.initial_metric(e.xi0, SMALL)
    c = ins.caloron_fields(H, e)
    assert np.max(np.abs(c.A)) < 1e-10
    X = e.xi0.mode(0).reshape(2, 2, 1, 1, 1, 1)
    assert np.max(np.abs(c.Phi - X)) < 1e-10
    assert c.anti_hermitian_defect() < 1e-12


def test_approximate_connection_phi_equals_xi(blip1):
    e = hm.blip(["1", "W"], a=[0.2, -0.2], mode="permissive")
    H = hf.initial_metric(e.xi0, SMALL)
    c = ins.caloron_fields(H, e, A=ins.approx_connection(e.xi0, e, SMALL))
    X = e.xi0.mode(0).reshape(2, 2, 1, 1, 1, 1)
    assert np.max(np.abs(c.Phi - X)) < 1e-8
    # radial gauge really kills the u-component
    R = ins.radial_gauge(ins.approx_connection(e.xi0, e, SMALL))
    assert np.max(np.abs(R.real_components()[2])) < 1e-8


def test_caloron_fields_converged(blip1, converged):
    c = ins.caloron_fields(converged, blip1)
    assert c.anti_hermitian_defect() < 1e-12
    # the unitarity defect before projection is a discretisation error;
    # compared on one physical region it falls at second order
    base = ProductGrid(nx=7, ny=7, nu=9, nphi=8, R_w=1.0, eps=float(np.exp(-1)), delta=0.8)
    defects = []
    for lev, g in enumerate((base, base.refined())):
        H, _ = hf.run_flow(blip1, g, hf.FlowConfig(check_every=200))
        R = ins.radial_gauge(ins.connection_from_pair(H, blip1))
        m = 2 ** lev
        sl = (slice(None), slice(None)) + (slice(m, -m),) * 3 + (slice(None),)
        defects.append(max(float(np.max(np.abs(X + mc.badj(X))[sl])) for X in R.real_components()))
        assert ins.caloron_fields(H, blip1).projection_defect > 0
    assert defects[1] < defects[0] / 2.5
    assert np.allclose(c.r, -SMALL.U / blip1.xi0.mu * np.ones(SMALL.shape))
    # theta periodicity: fields are sampled on the full circle, periodic by construction
    s = c.sample_at(np.array([0.1, 0.1 + 2 * np.pi]), np.array([[0.3, 0.3], [0.2, 0.2], [-0.5, -0.5]]))
    assert np.allclose(s["Phi"][..., 0], s["Phi"][..., 1])
    with pytest.raises(ins.InstantonError):
        c.sample_at(np.array([0.0]), np.zeros((3, 1)))


def test_decay_report(blip1):
    g = ProductGrid(nx=7, ny=7, nu=13, nphi=8, R_w=2.0, eps=float(np.exp(-4)), delta=0.8)
    H, d = hf.run_flow(blip1, g, hf.FlowConfig(check_every=100))
    rep = ins.decay_report(ins.caloron_fields(H, blip1))
    for key in ("phi_deviation", "invariant_deviation", "covariant_gradient", "connection_norm"):
        assert {"exponent", "ci95", "max"} <= set(rep[key])
    with pytest.raises(ins.InstantonError):
        ins.decay_report(ins.caloron_fields(H, blip1), r_range=(1.0, 2.0))


def test_shift_probe_trivial_and_control(blip1):
    cfg = hf.FlowConfig(check_every=100)
    r0 = ins.shift_equivalence_probe(blip1, [0, 0], SMALL, cfg)
    assert r0["top_discrepancy"] == 0.0 and r0["energy_discrepancy"] == 0.0
    r1 = ins.shift_equivalence_probe(blip1, [1, 1], SMALL, cfg)
    assert r1["top_discrepancy"] < 0.05
    ctrl = ins.shift_equivalence_probe(blip1, None, SMALL, cfg, partner=hm.blip(["1", "2*W"]))
    assert ctrl["top_discrepancy"] > 0.1
    with pytest.raises(hm.InvalidShift):
        ins.shift_equivalence_probe(blip1, [1, 0], SMALL, cfg)
