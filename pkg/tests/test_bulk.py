"""Coarse-graining layer maps, bulk optimizer, and isometry splitting.

The wiring of the three ascent channels is validated against an explicit
nine-site periodic network contracted by brute force: lifting a coupling and
pairing it with the top density must reproduce the bare bond energies, and
the descended density must equal the partial traces of the full state.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from merakit.bulk import (
    BulkMera,
    Layer,
    ReflectionRep,
    ascend_coupling,
    descend_density,
    disentangler_environment,
    fixed_point_density,
    identity_coupling,
    isometry_environment,
    optimize_bulk,
    reflect_coupling,
    split_isometry,
    symmetrize_environment,
)
from merakit.errors import ConfigError, ShapeError
from merakit.models import PAULI_Z, ising_bulk
from merakit.tensor import random_isometry, ttr


def random_layer(k, m, rng):
    u = random_isometry((k, k), k * k, rng).reshape(k, k, k, k)
    w = random_isometry((k, k, k), m, rng)
    return Layer(u, w)


def random_density(k, rng):
    a = rng.standard_normal((k * k, k * k))
    rho = a @ a.T
    rho /= np.trace(rho)
    return rho.reshape(k, k, k, k)


def random_coupling(k, rng):
    a = rng.standard_normal((k * k, k * k))
    return (0.5 * (a + a.T)).reshape(k, k, k, k)


def nine_site_state(layer, phi):
    """Single layer over nine periodic sites, topped by the given state."""
    u, w = layer.u, layer.w
    return np.einsum(
        "JKL,aWbJ,cXdK,eYfL,zmfa,ghbc,ijde->mWghXijYz",
        phi, w, w, w, u, u, u, optimize=True,
    )


def bond_energy(psi, h, r):
    n = psi.ndim
    s, t = r, (r + 1) % n
    hpsi = np.tensordot(h, psi, axes=([2, 3], [s, t]))
    rest = [i for i in range(n) if i not in (s, t)]
    hpsi = np.moveaxis(hpsi, range(n), [s, t] + rest)
    return float(np.sum(psi * hpsi))


def reduced_density(psi, s, t):
    rest = [i for i in range(psi.ndim) if i not in (s, t)]
    return np.tensordot(psi, psi, axes=(rest, rest))


def top_density(phi, spectator):
    rest = [spectator]
    return np.tensordot(phi, phi, axes=(rest, rest))


@pytest.fixture(scope="module")
def network():
    rng = np.random.default_rng(7)
    layer = random_layer(2, 3, rng)
    phi = rng.standard_normal((3, 3, 3))
    phi /= np.linalg.norm(phi)
    psi = nine_site_state(layer, phi)
    return layer, phi, psi


class TestChannelWiring:
    def test_state_is_normalized(self, network):
        _, _, psi = network
        assert abs(np.linalg.norm(psi) - 1.0) < 1e-12

    def test_ascended_coupling_matches_bond_energies(self, network):
        layer, phi, psi = network
        rng = np.random.default_rng(8)
        h = random_coupling(2, rng)
        h1 = ascend_coupling(h, layer)
        # Coarse bond (0,1) collects fine bonds (1,2), (2,3), (3,4); the
        # other two coarse bonds follow by shifting the window by three.
        rho01 = top_density(phi, 2)
        rho12 = top_density(phi, 0)
        rho20 = top_density(phi, 1).transpose(1, 0, 3, 2)
        got = ttr(h1, rho01)
        want = sum(bond_energy(psi, h, r) for r in (1, 2, 3))
        assert abs(got - want) < 1e-12
        got = ttr(h1, rho12)
        want = sum(bond_energy(psi, h, r) for r in (4, 5, 6))
        assert abs(got - want) < 1e-12
        got = ttr(h1, rho20)
        want = sum(bond_energy(psi, h, r) for r in (7, 8, 0))
        assert abs(got - want) < 1e-12

    def test_descended_density_matches_partial_traces(self, network):
        layer, phi, psi = network
        rho01 = top_density(phi, 2)
        got = descend_density(rho01, layer)
        want = (
            reduced_density(psi, 1, 2)
            + reduced_density(psi, 2, 3)
            + reduced_density(psi, 3, 4)
        ) / 3.0
        assert np.linalg.norm(got - want) < 1e-12


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([(2, 2), (2, 3), (3, 3), (2, 8)]))
def test_ascend_descend_are_adjoint(seed, dims):
    k, m = dims
    rng = np.random.default_rng(seed)
    layer = random_layer(k, m, rng)
    h = random_coupling(k, rng)
    rho = random_density(m, rng)
    lhs = ttr(ascend_coupling(h, layer), rho)
    rhs = 3.0 * ttr(h, descend_density(rho, layer))
    assert abs(lhs - rhs) < 1e-12 * max(1.0, abs(lhs))


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_identity_lifts_to_three_identities(seed):
    rng = np.random.default_rng(seed)
    layer = random_layer(2, 4, rng)
    out = ascend_coupling(identity_coupling(2), layer)
    assert np.linalg.norm(out - 3.0 * identity_coupling(4)) < 1e-12


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_descend_preserves_trace_and_positivity(seed):
    rng = np.random.default_rng(seed)
    layer = random_layer(3, 5, rng)
    rho = random_density(5, rng)
    out = descend_density(rho, layer)
    tr = np.einsum("abab->", out)
    assert abs(tr - 1.0) < 1e-12
    mat = out.reshape(9, 9)
    assert np.linalg.norm(mat - mat.T) < 1e-12
    assert np.linalg.eigvalsh(mat).min() > -1e-12


def test_fixed_point_density_satisfies_its_equation():
    rng = np.random.default_rng(11)
    layer = random_layer(3, 3, rng)
    rho = fixed_point_density(layer, tol=1e-10)
    assert np.linalg.norm(descend_density(rho, layer) - rho) < 1e-8
    assert abs(np.einsum("abab->", rho) - 1.0) < 1e-12
    mat = rho.reshape(9, 9)
    assert np.linalg.norm(mat - mat.T) < 1e-13
    assert np.linalg.eigvalsh(mat).min() > -1e-10
    # warm restart lands on the same point immediately
    again = fixed_point_density(layer, tol=1e-10, rho0=rho)
    assert np.linalg.norm(again - rho) < 1e-9


def test_fixed_point_requires_self_similar_layer():
    rng = np.random.default_rng(3)
    with pytest.raises(ShapeError):
        fixed_point_density(random_layer(2, 3, rng))


class TestEnvironmentGradients:
    """Central differences of the lifted energy against the environments.

    The energy is tTr(ascend(h), rho); each tensor enters once on the bra and
    once on the ket side, so the derivative is twice the one-sided
    environment when h and rho are symmetric.
    """

    def setup_method(self):
        rng = np.random.default_rng(21)
        self.layer = random_layer(2, 3, rng)
        self.h = random_coupling(2, rng)
        self.rho = random_density(3, rng)

    def energy(self, layer):
        return ttr(ascend_coupling(self.h, layer), self.rho)

    def test_disentangler_environment(self):
        env = 2.0 * disentangler_environment(self.h, self.rho, self.layer)
        num = np.zeros_like(env)
        eps = 1e-5
        u = self.layer.u
        for idx in np.ndindex(u.shape):
            du = np.zeros_like(u)
            du[idx] = eps
            ep = self.energy(Layer(u + du, self.layer.w))
            em = self.energy(Layer(u - du, self.layer.w))
            num[idx] = (ep - em) / (2 * eps)
        assert np.linalg.norm(num - env) < 1e-8 * max(1.0, np.linalg.norm(env))

    def test_isometry_environment(self):
        env = 2.0 * isometry_environment(self.h, self.rho, self.layer)
        num = np.zeros_like(env)
        eps = 1e-5
        w = self.layer.w
        for idx in np.ndindex(w.shape):
            dw = np.zeros_like(w)
            dw[idx] = eps
            ep = self.energy(Layer(self.layer.u, w + dw))
            em = self.energy(Layer(self.layer.u, w - dw))
            num[idx] = (ep - em) / (2 * eps)
        assert np.linalg.norm(num - env) < 1e-8 * max(1.0, np.linalg.norm(env))


class TestReflection:
    def test_symmetrize_environment_doubles_symmetric_input(self):
        rng = np.random.default_rng(5)
        rep = ReflectionRep.identity(2)
        raw = rng.standard_normal((2, 2, 2, 2))
        sym = raw + reflect_coupling(raw, rep)
        assert np.linalg.norm(symmetrize_environment(sym, rep) - 2 * sym) < 1e-12
        anti = raw - reflect_coupling(raw, rep)
        assert np.linalg.norm(symmetrize_environment(anti, rep)) < 1e-12
        out = symmetrize_environment(raw, rep)
        assert np.linalg.norm(out - reflect_coupling(out, rep)) < 1e-12

    def test_symmetrize_isometry_environment_output_is_symmetric(self):
        rng = np.random.default_rng(6)
        rep = ReflectionRep(np.diag([1.0, -1.0, 1.0]))
        coarse = ReflectionRep(np.diag([1.0, -1.0]))
        env = rng.standard_normal((3, 3, 3, 2))
        out = symmetrize_environment(env, rep, coarse=coarse)
        again = symmetrize_environment(out, rep, coarse=coarse)
        assert np.linalg.norm(again - 2 * out) < 1e-12

    def test_rep_validation(self):
        with pytest.raises(ConfigError):
            ReflectionRep(np.array([[0.0, 1.0], [0.0, 1.0]]))
        with pytest.raises(ConfigError):
            ReflectionRep(np.array([[0.0, 1.0], [1.0, 0.0]])).parities


class TestOptimizedIsing:
    # ising_chi4 comes from conftest, shared across the whole session.
    def test_energy_per_site(self, ising_chi4):
        assert abs(ising_chi4.energy_per_site + 4.0 / np.pi) < 2e-3

    def test_energy_history_descends(self, ising_chi4):
        hist = ising_chi4.energy_history
        assert len(hist) == 2001
        assert hist[-1] < hist[0]
        tail = hist[len(hist) // 2 :]
        assert np.max(np.diff(tail)) < 1e-7

    def test_tensors_are_isometric(self, ising_chi4):
        for layer in [*ising_chi4.transitional, ising_chi4.fixed]:
            layer.validate(tol=1e-12)

    def test_density_is_self_consistent(self, ising_chi4):
        rho = ising_chi4.rho2
        res = descend_density(rho, ising_chi4.fixed) - rho
        assert np.linalg.norm(res) < 1e-8

    def test_parity_sectors_are_exact(self, ising_chi4):
        sigs = ising_chi4.flip_signatures
        assert sigs is not None
        for layer, s_in, s_out in zip(
            [*ising_chi4.transitional, ising_chi4.fixed],
            sigs,
            [*sigs[1:], sigs[-1]],
        ):
            pu = np.multiply.outer(
                np.multiply.outer(s_in, s_in), np.multiply.outer(s_in, s_in)
            ).reshape(layer.u.shape)
            pw = np.multiply.outer(
                np.multiply.outer(s_in, s_in), np.multiply.outer(s_in, s_out)
            ).reshape(layer.w.shape)
            assert np.linalg.norm(layer.u[pu < 0]) < 1e-12
            assert np.linalg.norm(layer.w[pw < 0]) < 1e-12

    def test_magnetization_is_plausible(self, ising_chi4):
        mag = ising_chi4.expectation_site(PAULI_Z)
        assert 0.5 < mag < 0.75

    def test_checkpoint_roundtrip(self, ising_chi4, tmp_path):
        path = tmp_path / "bulk.mera"
        ising_chi4.save(path)
        back = BulkMera.load(path)
        assert np.array_equal(back.fixed.w, ising_chi4.fixed.w)
        assert np.array_equal(back.transitional[0].u, ising_chi4.transitional[0].u)
        assert back.energy_per_site == ising_chi4.energy_per_site
        assert back.shift == pytest.approx(ising_chi4.shift)
        assert np.array_equal(back.flip_signatures[1], ising_chi4.flip_signatures[1])
        assert np.linalg.norm(back.densities()[0] - ising_chi4.densities()[0]) < 1e-12

    def test_self_similar_coupling_is_reached(self, ising_chi4):
        hstar = ising_chi4.fixed_point_coupling()
        again = ascend_coupling(hstar, ising_chi4.fixed) / 3.0
        assert np.linalg.norm(again - hstar) < 1e-8

    def test_split_of_optimized_isometry(self, ising_chi4):
        rho = ising_chi4.rho2
        rho1 = 0.5 * (
            np.einsum("abcb->ac", rho) + np.einsum("abad->bd", rho)
        )
        for chi_mid, floor in ((16, 1e-10), (6, 5e-3)):
            _, _, fid = split_isometry(ising_chi4.fixed.w, rho1, chi_mid)
            assert fid <= 1.0 + 1e-12
            assert fid >= 1.0 - floor


def test_optimize_with_reflection_keeps_tensors_symmetric():
    mera = optimize_bulk(
        ising_bulk(),
        chi=4,
        transitional=1,
        sweeps=40,
        flip=PAULI_Z,
        reflection=ReflectionRep.identity(2),
        seed=3,
    )
    pins = mera.reflection_parities
    assert pins is not None
    for layer, p_in, p_out in zip(
        [*mera.transitional, mera.fixed], pins, [*pins[1:], pins[-1]]
    ):
        r_in, r_out = np.diag(p_in), np.diag(p_out)
        ru = np.einsum("ae,bf,cg,dh,fehg->abcd", r_in, r_in, r_in, r_in, layer.u)
        rw = np.einsum("ae,bf,cg,mn,gfen->abcm", r_in, r_in, r_in, r_out, layer.w)
        assert np.linalg.norm(ru - layer.u) < 1e-10
        assert np.linalg.norm(rw - layer.w) < 1e-10
    assert mera.energy_history[-1] < mera.energy_history[0]


def test_progress_callback_sees_every_sweep():
    seen = []
    optimize_bulk(
        ising_bulk(), chi=4, transitional=0, sweeps=5, seed=0,
        progress=lambda s, e: seen.append((s, e)),
    )
    assert [s for s, _ in seen] == list(range(6))
    assert all(np.isfinite(e) for _, e in seen)


class TestOptimizeValidation:
    def test_rejects_nonsymmetric_coupling(self):
        h = np.zeros((2, 2, 2, 2))
        h[0, 0, 1, 1] = 1.0
        with pytest.raises(ConfigError):
            optimize_bulk(h, chi=4, transitional=0, sweeps=1)

    def test_rejects_small_bond_dimension(self):
        with pytest.raises(ConfigError):
            optimize_bulk(ising_bulk(), chi=1, transitional=0, sweeps=1)

    def test_rejects_parity_mixing_coupling(self):
        x = np.array([[0.0, 1.0], [1.0, 0.0]])
        h = np.kron(x, np.eye(2)).reshape(2, 2, 2, 2)
        with pytest.raises(ConfigError):
            optimize_bulk(h, chi=4, transitional=0, sweeps=1, flip=PAULI_Z)

    def test_rejects_reflection_breaking_coupling(self):
        x = np.array([[0.0, 1.0], [1.0, 0.0]])
        z = np.diag([1.0, -1.0])
        h = np.kron(x, z).reshape(2, 2, 2, 2)
        with pytest.raises(ConfigError):
            optimize_bulk(
                h, chi=4, transitional=0, sweeps=1,
                reflection=ReflectionRep.identity(2),
            )

    def test_rejects_nondiagonal_flip(self):
        x = np.array([[0.0, 1.0], [1.0, 0.0]])
        with pytest.raises(ConfigError):
            optimize_bulk(ising_bulk(), chi=4, transitional=0, sweeps=1, flip=x)


class TestSplitIsometry:
    def test_full_internal_dimension_is_lossless(self):
        rng = np.random.default_rng(31)
        w = random_isometry((3, 3, 3), 3, rng)
        a = rng.standard_normal((3, 3))
        rho1 = a @ a.T
        rho1 /= np.trace(rho1)
        w_up, w_low, fid = split_isometry(w, rho1, chi_mid=9)
        assert fid >= 1.0 - 1e-10
        assert fid <= 1.0 + 1e-12
        recomposed = np.einsum("aen,bce->abcn", w_up, w_low)
        overlap = np.einsum("abcn,abcm,mn->", recomposed, w, rho1)
        assert abs(overlap - fid) < 1e-12

    def test_rank_one_density_splits_exactly_at_native_dimension(self):
        rng = np.random.default_rng(32)
        w = random_isometry((3, 3, 3), 3, rng)
        v = rng.standard_normal(3)
        v /= np.linalg.norm(v)
        rho1 = np.outer(v, v)
        _, _, fid = split_isometry(w, rho1, chi_mid=3)
        assert fid >= 1.0 - 1e-10

    def test_factors_are_isometric(self):
        rng = np.random.default_rng(33)
        w = random_isometry((2, 2, 2, ), 4, rng)
        rho1 = np.eye(4) / 4.0
        w_up, w_low, _ = split_isometry(w, rho1, chi_mid=3)
        assert w_up.shape == (2, 3, 4)
        assert w_low.shape == (2, 2, 3)
        mu = w_up.reshape(6, 4)
        ml = w_low.reshape(4, 3)
        assert np.linalg.norm(mu.T @ mu - np.eye(4)) < 1e-12
        assert np.linalg.norm(ml.T @ ml - np.eye(3)) < 1e-12

    def test_input_validation(self):
        rng = np.random.default_rng(34)
        w = random_isometry((2, 2, 2), 4, rng)
        good = np.eye(4) / 4.0
        with pytest.raises(ConfigError):
            split_isometry(w, np.eye(4), chi_mid=2)
        with pytest.raises(ShapeError):
            split_isometry(w, good, chi_mid=5)
        with pytest.raises(ShapeError):
            split_isometry(w, good, chi_mid=1)
