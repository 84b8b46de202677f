import json

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from caloron import holomap as hm
from caloron.looporbit import LoopAlgebraElement

seeds = st.integers(0, 2 ** 31 - 1)


def test_parse_polynomials_and_rationals():
    w, W = sp.symbols("w W")
    assert hm.parse_polynomial("2*w^2 + 3j*W") == 2 * w ** 2 + 3 * sp.I * W
    assert hm.parse_polynomial("I*w") == sp.I * w
    assert hm.parse_rational(["W", "1 + w*W"]) == W / (1 + w * W)
    for bad in ("x + 1", "w/W", "import os", "sin(w)"):
        with pytest.raises(hm.MapError):
            hm.parse_polynomial(bad)
    with pytest.raises(hm.MapError):
        hm.parse_rational(["1", "0"])


def test_zero_field():
    e = hm.zero_field(2)
    assert e.is_zero
    assert hm.degree(e) == (0.0, 0.0)
    assert np.all(e.field(np.array([0.3 + 1j]), np.array([0.5])) == 0)


def test_blip_eta_formula_against_projector_derivative():
    e = hm.blip(["1", "W"])
    b = hm.BlipMap(["1", "W"], LoopAlgebraElement.from_eigenvalues([0, 0]))
    w0 = np.array(0.4 - 0.7j)
    h = 1e-6
    dP = (b.projector_values(w0 + h) - b.projector_values(w0 - h)) / (2 * h)
    dP = dP + 1j * (b.projector_values(w0 + 1j * h) - b.projector_values(w0 - 1j * h)) / (2 * h)
    dPwb = dP / 2
    for z in (0.3, -0.2 + 0.5j):
        assert np.allclose(hm.eta_eval(e, w0, z), (z - 1) * dPwb, atol=1e-7)


@given(seeds)
@settings(max_examples=20)
def test_horner_matches_direct(seed):
    rng = np.random.default_rng(seed)
    e = hm.blip(["1", "W^2"])
    w = complex(*rng.normal(size=2))
    z = 0.9 * rng.uniform() * np.exp(2j * np.pi * rng.uniform())
    assert np.allclose(hm.eta_eval(e, w, z), hm.eta_eval_direct(e, w, z), atol=1e-12)


def test_eta_at_infinity_and_outside_disk():
    e = hm.blip(["1", "W"])
    assert np.all(hm.eta_eval(e, np.inf, 0.5) == 0)
    with pytest.raises(hm.MapError):
        hm.eta_eval(e, 0.1, 1.5)


@pytest.mark.parametrize("v,deg", [(["1", "W"], 1.0), (["1", "W^2"], 2.0), (["1", "2*W"], 1.0),
                                   (["W", "1"], 1.0), (["1", "W^3"], 3.0)])
def test_blip_degree(v, deg):
    d, err = hm.degree(hm.blip(v))
    assert abs(d - deg) <= 1e-2
    assert err < 1e-4


@given(st.floats(0, 2 * np.pi))
@settings(max_examples=5)
def test_degree_rotation_invariant(beta):
    e = hm.blip(["1", "W"])
    assert abs(hm.degree(hm.rotate(e, beta))[0] - hm.degree(e)[0]) < 1e-6


def test_unbased_and_weight_checks():
    with pytest.raises(hm.MapError):
        hm.EtaField([sp.Matrix([[1, 0], [0, 0]])], LoopAlgebraElement.from_eigenvalues([0, 0])).validate()
    # negative twisted weight: off-diagonal k=0 entry with a_1 - a_2 < 0
    e = hm.EtaField([sp.Matrix([[0, sp.sympify("W") / (1 + sp.sympify("w*W"))], [0, 0]])],
                    LoopAlgebraElement.from_eigenvalues([-0.2, 0.2]), mode="permissive")
    with pytest.raises(hm.MapError):
        e.validate()


def test_strict_mode_requires_centraliser():
    spec = {"type": "eta", "dim": 2, "xi0": [0.2, -0.2], "mode": "strict",
            "coeffs": [[["0", ["W", "1 + w*W"]], ["0", "0"]]]}
    with pytest.raises(hm.MapError):
        hm.load_map(spec)
    spec["mode"] = "permissive"
    e = hm.load_map(spec)
    assert e.mode == "permissive"


def test_load_map_variants(tmp_path):
    spec = {"type": "blip", "dim": 2, "v": ["1", "W"]}
    e1 = hm.load_map(spec)
    e2 = hm.load_map(json.dumps(spec))
    p = tmp_path / "m.json"
    p.write_text(json.dumps(spec))
    e3 = hm.load_map(p)
    w = np.array([0.2 + 0.1j, -1.5])
    for e in (e2, e3):
        assert np.allclose(e.field(w, 0.5), e1.field(w, 0.5))
    for bad in ({"dim": 2}, {"type": "nope", "dim": 2}, {"type": "blip", "dim": 2, "v": ["1"]},
                {"type": "blip", "dim": 2, "v": ["1", "w"]}):
        with pytest.raises(hm.MapError):
            hm.load_map(bad)


def test_pole_detection():
    e = hm.load_map({"type": "eta", "dim": 2, "coeffs": [[[["W", "w*W - 1"], "0"], ["0", "0"]]],
                     "mode": "strict"})
    with pytest.raises(hm.MapError):
        e.check_finite(np.array([1.0 + 0j]))


def test_lattice_shift_degree_and_errors():
    e = hm.blip(["1", "W"])
    s, xi1 = hm.lattice_shift(e, [1, 1])
    assert np.allclose(xi1.eigenvalues(), [1, 1])
    assert abs(hm.degree(s)[0] - hm.degree(e)[0]) < 1e-6
    s0, _ = hm.lattice_shift(e, [0, 0])
    assert all(a == b for a, b in zip(s0.coeffs, e.coeffs))
    with pytest.raises(hm.InvalidShift):
        hm.lattice_shift(e, [0.5, 0])
    with pytest.raises(hm.InvalidShift):
        hm.lattice_shift(e, [1, 0])          # off-diagonal pole z^{-1}


def test_diagonal_shift_keeps_eta():
    r = ["W", "(1 + w*W)^2"]
    e = hm.load_map({"type": "eta", "dim": 2, "coeffs": [[["0", "0"], ["0", "0"]],
                                                         [[r, "0"], ["0", ["-W", "(1 + w*W)^2"]]]]})
    s, xi1 = hm.lattice_shift(e, [1, -1])
    assert np.allclose(xi1.eigenvalues(), [1, -1])
    w = np.array([0.3 - 0.2j])
    assert np.allclose(s.field(w, 0.4), e.field(w, 0.4))
    # weight-1 diagonal modes: (1/pi) int 2|w|^2/(1+|w|^2)^4 d^2w = 2 B(2, 2) = 1/3
    assert abs(hm.degree(e)[0] - 1 / 3) < 1e-6


def test_divergent_degree_integral_raises():
    r = ["W", "1 + w*W"]
    e = hm.load_map({"type": "eta", "dim": 2, "coeffs": [[["0", "0"], ["0", "0"]],
                                                         [[r, "0"], ["0", "0"]]]})
    with pytest.raises(hm.QuadratureError):
        hm.degree(e)


def test_sphere_quadrature_area():
    # int d^2w 4/(1+|w|^2)^2 = 4 pi
    val, err = hm.sphere_integral(lambda w: 4 / (1 + np.abs(w) ** 2) ** 2)
    assert abs(val - 4 * np.pi) < 1e-8
