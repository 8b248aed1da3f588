"""Spectra, correlators and profiles read off optimized networks.

The side-density descent is checked against brute-force contraction of a
nine-site stack wavefunction, channel by channel. Spectra and correlators on
the optimized Ising fixture are compared with the exactly known tower
(1/8, 1, ...) and the closed-form XX correlator; boundary profiles and the
excess energy with the free-fermion solution of the same open chain. The
analytic bond-defect tower is frozen from an independent evaluation.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from merakit import scaling
from merakit.bulk import _DESCEND, Layer
from merakit.errors import ConfigError, ShapeError
from merakit.exact import free_fermion_ising, ising_xx_correlator
from merakit.models import PAULI_X, PAULI_Z, get_model
from merakit.scaling import (
    SideProfile,
    boundary_excess_energy,
    bulk_spectrum,
    classify_parity,
    defect_spectrum,
    expectation_profile,
    fit_power_law,
    impurity_correlator,
    predicted_defect_dims,
    site_correlator,
    two_point,
)
from merakit.tensor import random_isometry
from merakit.ttn import optimize_defect
from merakit.wilson import build_wilson

EYE2 = np.eye(2)


# ---------------------------------------------------------------------------
# analytic defect tower


def test_predicted_dims_frozen_values():
    # frozen from a separate evaluation of 2 (m + 1/4 + theta/pi)^2
    assert_allclose(
        predicted_defect_dims(0.4), [0.287101712842, 0.771577479206], atol=1e-9
    )
    assert_allclose(
        predicted_defect_dims(2.5), [0.029339596024, 1.544863829661], atol=1e-9
    )
    assert_allclose(predicted_defect_dims(1.0), [0.125, 1.125], atol=1e-12)
    assert_allclose(predicted_defect_dims(0.0), [0.5, 0.5], atol=1e-12)
    assert_allclose(predicted_defect_dims(math.inf), [0.0, 2.0], atol=1e-12)


def test_predicted_dims_levels_and_guard():
    got = predicted_defect_dims(1.0, levels=(-2, -1, 0, 1))
    assert_allclose(got, [0.125, 1.125, 3.125, 6.125], atol=1e-12)
    assert got == sorted(got)
    with pytest.raises(ConfigError):
        predicted_defect_dims(-0.1)


# ---------------------------------------------------------------------------
# parity classification


def test_classify_parity_basics():
    sig = np.array([1.0, -1.0])
    assert classify_parity(PAULI_Z, sig) == 1.0
    assert classify_parity(PAULI_X, sig) == -1.0
    assert classify_parity(PAULI_X + PAULI_Z, sig) == 0.0
    assert classify_parity(np.zeros((2, 2)), sig) == 0.0
    with pytest.raises(ShapeError):
        classify_parity(np.eye(3), sig)


@settings(max_examples=30, deadline=None)
@given(st.data())
def test_classify_parity_scale_invariant(data):
    rng = np.random.default_rng(data.draw(st.integers(0, 2**31)))
    n = data.draw(st.integers(2, 5))
    sig = rng.choice([1.0, -1.0], size=n)
    mask = sig[:, None] * sig[None, :]
    even = rng.standard_normal((n, n)) * (mask > 0) + np.eye(n)
    scale = 10.0 ** data.draw(st.integers(-8, 8))
    assert classify_parity(even * scale, sig) == 1.0
    odd = rng.standard_normal((n, n)) * (mask < 0)
    if np.linalg.norm(odd) > 0:
        assert classify_parity(odd * scale, sig) == -1.0


# ---------------------------------------------------------------------------
# scale maps of random isometries: unital, no expanding directions


def random_layer(k, m, rng):
    u = random_isometry((k, k), k * k, rng).reshape(k, k, k, k)
    return Layer(u, random_isometry((k, k, k), m, rng))


def test_bulk_map_of_random_layer_is_unital_and_contractive():
    for seed in range(4):
        rng = np.random.default_rng(seed)
        spec = bulk_spectrum(random_layer(3, 3, rng))
        assert abs(spec.values[0] - 1.0) < 1e-9
        assert np.abs(spec.values).max() < 1.0 + 1e-9
        op0 = spec.operators[0]
        assert_allclose(op0 / op0[0, 0], np.eye(3), atol=1e-8)
        assert spec.parities is None
        assert spec.dimensions[0] < 1e-9


def test_defect_map_of_random_chain_tensor_is_unital_and_contractive():
    for seed in range(4):
        rng = np.random.default_rng(10 + seed)
        v = random_isometry((5, 3), 5, rng)
        spec = defect_spectrum(v)
        assert abs(spec.values[0] - 1.0) < 1e-9
        assert np.abs(spec.values).max() < 1.0 + 1e-9
        op0 = spec.operators[0]
        assert_allclose(op0 / op0[0, 0], np.eye(5), atol=1e-8)


def test_spectrum_input_guards():
    rng = np.random.default_rng(0)
    with pytest.raises(ConfigError):
        bulk_spectrum("not a network")
    with pytest.raises(ShapeError):
        bulk_spectrum(random_layer(3, 4, rng))
    with pytest.raises(ShapeError):
        defect_spectrum(rng.standard_normal((4, 3, 5)))
    spec = defect_spectrum(random_isometry((4, 2), 4, rng))
    with pytest.raises(ConfigError):
        spec.dims(parity=1.0)


# ---------------------------------------------------------------------------
# power-law fits


def test_fit_power_law_recovers_clean_law():
    rs = np.arange(1.0, 30.0)
    vals = 2.0 + 3.5 * rs ** -0.7
    expn, amp, resid = fit_power_law(vals, bulk_value=2.0, rs=rs)
    assert abs(expn - 0.7) < 1e-10
    assert abs(amp - 3.5) < 1e-9
    assert resid < 1e-12


def test_fit_power_law_default_positions_and_sign():
    vals = 4.0 / np.arange(1.0, 11.0) ** 2
    expn, amp, resid = fit_power_law(vals)
    assert abs(expn - 2.0) < 1e-10
    assert abs(amp - 4.0) < 1e-9


def test_fit_power_law_reports_curvature():
    rs = np.arange(1.0, 40.0)
    expn, amp, resid = fit_power_law(rs ** -1 + rs ** -2, rs=rs)
    assert 1.0 < expn < 2.0
    assert resid > 1e-3


def test_fit_power_law_guards():
    with pytest.raises(ConfigError):
        fit_power_law(np.full(8, 1.3), bulk_value=1.3)
    with pytest.raises(ShapeError):
        fit_power_law([1.0, 2.0, 3.0], rs=[1.0, 2.0])
    with pytest.raises(ConfigError):
        fit_power_law([1.0, 2.0], rs=[0.0, 1.0])


# ---------------------------------------------------------------------------
# descent oracle: nine explicit sites against the two-site side density
#
# One chain scale over two layer cells, all tensors random isometries, the
# state above them arbitrary. psi has the defect leg r and lattice sites
# a..i; every extractor must agree with the brute-force partial trace.


@pytest.fixture(scope="module")
def stack():
    rng = np.random.default_rng(7)
    wl = random_isometry((2, 2), 3, rng)
    u = random_isometry((2, 2), 4, rng).reshape(2, 2, 2, 2)
    w = random_isometry((2, 2, 2), 3, rng)
    v1 = random_isometry((2, 3), 4, rng)
    t = rng.standard_normal((4, 3, 3))
    t /= np.linalg.norm(t)
    psi = np.einsum(
        "ape,bcpq,qdtm,fgtv,vhin,reB,Bmn->rabcdfghi", wl, u, w, u, w, v1, t
    )
    sig1 = np.einsum("Bmn,Cop->BmnCop", t, t)
    cap = scaling._cut_cap(wl, Layer(u=u, w=w))
    return {
        "psi": psi,
        "sig1": sig1,
        "cap": cap,
        "v3": v1.reshape(2, 3, 4),
        "u": u,
        "w": w,
    }


def test_sigma_step_matches_stack(stack):
    sig0 = scaling._sigma_step(stack["sig1"], stack["v3"], 0, stack["cap"])
    want = np.einsum("rabcdfghi,RABcdfghi->rabRAB", stack["psi"], stack["psi"])
    assert np.abs(sig0 - want).max() < 1e-12
    p12 = scaling._pair_here(sig0)
    want12 = np.einsum("rabcdfghi,rABcdfghi->abAB", stack["psi"], stack["psi"])
    assert np.abs(p12 - want12).max() < 1e-12


def test_cut_pairs_match_stack(stack):
    psi = stack["psi"]
    p23 = scaling._cut_pair(stack["sig1"], stack["v3"], 0, stack["cap"], 2)
    want = np.einsum("rabcdfghi,raBCdfghi->bcBC", psi, psi)
    assert np.abs(p23 - want).max() < 1e-12
    p34 = scaling._cut_pair(stack["sig1"], stack["v3"], 0, stack["cap"], 3)
    want = np.einsum("rabcdfghi,rabCDfghi->cdCD", psi, psi)
    assert np.abs(p34 - want).max() < 1e-12


def test_channel_descent_matches_stack(stack):
    psi, u, w = stack["psi"], stack["u"], stack["w"]
    base = scaling._pair_here(stack["sig1"])
    oracles = {
        0: "rabcdfghi,rabcDFghi->dfDF",
        1: "rabcdfghi,rabcdFGhi->fgFG",
        2: "rabcdfghi,rabcdfGHi->ghGH",
    }
    for ch, spec in oracles.items():
        got = np.einsum(_DESCEND[ch], w, u, w, u, w, w, base)
        want = np.einsum(spec, psi, psi)
        assert np.abs(got - want).max() < 1e-12, f"channel {ch}"


def test_link_pair_matches_stack(stack):
    sig0 = scaling._sigma_step(stack["sig1"], stack["v3"], 0, stack["cap"])
    lp = scaling._link_pair(sig0, (2,), 0)
    want = np.einsum("rabcdfghi,RAbcdfghi->raRA", stack["psi"], stack["psi"])
    assert np.abs(lp - want).max() < 1e-12


# ---------------------------------------------------------------------------
# bulk spectra and correlators on the optimized Ising network


def test_ising_tower(ising_chi4):
    spec = bulk_spectrum(ising_chi4)
    assert abs(spec.values[0] - 1.0) < 1e-9
    assert_allclose(spec.operators[0], np.eye(4), atol=1e-6)
    assert spec.parities[0] == 1.0
    odd = spec.dims(parity=-1.0)
    even = spec.dims(parity=1.0)
    assert abs(odd[0] - 0.125) < 0.01
    assert abs(even[1] - 1.0) < 0.05


def test_bulk_spectrum_of_bare_layer_matches(ising_chi4):
    full = bulk_spectrum(ising_chi4, count=6)
    bare = bulk_spectrum(ising_chi4.fixed, count=6)
    assert_allclose(np.abs(bare.values), np.abs(full.values), atol=1e-10)
    assert bare.parities is None


def test_two_point_identity_and_telescoping(ising_chi4):
    spec = bulk_spectrum(ising_chi4)
    for q in range(3):
        assert abs(two_point(ising_chi4, 0, 0, q, spectrum=spec) - 1.0) < 1e-12
    i = int(np.argmax(spec.parities == -1.0))
    v1 = two_point(ising_chi4, i, i, 1, spectrum=spec)
    v2 = two_point(ising_chi4, i, i, 2, spectrum=spec)
    lam2 = (spec.values[i] ** 2).real
    assert abs(v2 / v1 - lam2) < 1e-12
    with pytest.raises(ConfigError):
        two_point(ising_chi4, 0, 0, -1, spectrum=spec)


def test_site_correlator_xx_vs_closed_form(ising_chi4):
    for q in (1, 2, 3, 4):
        got = site_correlator(ising_chi4, PAULI_X, PAULI_X, q)
        want = ising_xx_correlator(3**q)
        assert abs(got / want - 1.0) < 0.05, f"q={q}"
        gid = site_correlator(ising_chi4, EYE2, EYE2, q)
        assert abs(gid - 1.0) < 1e-9
    with pytest.raises(ConfigError):
        site_correlator(ising_chi4, PAULI_X, PAULI_X, 0)


def test_site_correlator_xx_exponent(ising_chi4):
    vals = [site_correlator(ising_chi4, PAULI_X, PAULI_X, q) for q in (1, 2, 3, 4)]
    expn, _, _ = fit_power_law(vals, rs=[3.0**q for q in (1, 2, 3, 4)])
    assert abs(expn - 0.25) < 0.03
