import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from merakit import models
from merakit.errors import ConfigError


def _mat(bond):
    d = bond.shape[0]
    return bond.reshape(d * d, d * d)


@pytest.mark.parametrize("build", [
    lambda: models.ising_bulk(),
    lambda: models.xx_bulk(),
    lambda: models.ising_impurity(0.7),
    lambda: models.interface_term(0.3),
])
def test_two_site_builders_are_symmetric(build):
    m = _mat(build())
    assert_allclose(m, m.T, atol=1e-15)


def test_ising_bulk_matrix():
    m = _mat(models.ising_bulk())
    x, z, i2 = models.PAULI_X, models.PAULI_Z, np.eye(2)
    expect = -np.kron(x, x) - 0.5 * (np.kron(z, i2) + np.kron(i2, z))
    assert_allclose(m, expect, atol=1e-15)
    assert abs(np.trace(m)) < 1e-15


def test_xx_bulk_matrix():
    m = _mat(models.xx_bulk())
    # XX + YY is real with entries 0 or +-2
    assert m.dtype == np.float64
    mags = np.unique(np.abs(m))
    assert_allclose(mags, [0.0, 2.0], atol=1e-15)
    assert_allclose(m, m.T, atol=1e-15)
    expect = np.zeros((4, 4))
    expect[1, 2] = expect[2, 1] = 2.0
    assert_allclose(m, expect, atol=1e-15)


def test_ising_impurity_values():
    xx = np.kron(models.PAULI_X, models.PAULI_X)
    assert_allclose(_mat(models.ising_impurity(1.0)), np.zeros((4, 4)), atol=1e-15)
    assert_allclose(_mat(models.ising_impurity(0.0)), xx, atol=1e-15)
    assert_allclose(_mat(models.ising_impurity(0.4)), 0.6 * xx, atol=1e-15)
    with pytest.raises(ConfigError):
        models.ising_impurity(-0.1)
    with pytest.raises(ConfigError):
        models.ising_impurity(math.inf)


def test_impurity_cancels_host_bond():
    # alpha=0 exactly removes the XX part of the host bond
    total = _mat(models.ising_bulk()) + _mat(models.ising_impurity(0.0))
    z, i2 = models.PAULI_Z, np.eye(2)
    assert_allclose(total, -0.5 * (np.kron(z, i2) + np.kron(i2, z)), atol=1e-15)


def test_strong_bond_projector():
    p = models.strong_bond_projector()
    assert_allclose(p.T @ p, np.eye(2), atol=1e-15)
    xx = np.kron(models.PAULI_X, models.PAULI_X)
    zz = np.kron(models.PAULI_Z, models.PAULI_Z)
    assert_allclose(p.T @ xx @ p, np.eye(2), atol=1e-15)
    assert_allclose(p.T @ zz @ p, np.diag([1.0, -1.0]), atol=1e-15)


def test_impurity_phase():
    assert_allclose(models.impurity_phase(0.4), 0.40489178628508343, atol=1e-12)
    assert_allclose(models.impurity_phase(0.0), math.pi / 4, atol=1e-15)
    assert models.impurity_phase(1.0) == 0.0
    assert_allclose(models.impurity_phase(math.inf), -math.pi / 4, atol=1e-15)
    with pytest.raises(ConfigError):
        models.impurity_phase(-2.0)


def test_boundary_term_kinds():
    assert not np.any(models.boundary_term("free"))
    assert_allclose(models.boundary_term("fixed-up"), models.PAULI_X, atol=1e-15)
    assert_allclose(models.boundary_term("fixed-down"), -models.PAULI_X, atol=1e-15)
    with pytest.raises(ConfigError):
        models.boundary_term("periodic")


def test_interface_term_scales_linearly():
    xx = np.kron(models.PAULI_X, models.PAULI_X)
    assert not np.any(models.interface_term(0.0))
    assert_allclose(_mat(models.interface_term(1.0)), xx, atol=1e-15)
    assert_allclose(_mat(models.interface_term(0.5)), 0.5 * xx, atol=1e-15)


def test_yjunction_term():
    assert not np.any(models.yjunction_term(0.0))
    t = models.yjunction_term(1.0)
    # cyclic relabeling of the three legs leaves the term unchanged
    assert_allclose(t, t.transpose(1, 2, 0, 4, 5, 3), atol=1e-15)
    vals = np.linalg.eigvalsh(t.reshape(8, 8))
    assert_allclose(vals, [-3.0, -3.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0], atol=1e-12)


def test_get_model_registry():
    ising = models.get_model("ising")
    assert ising.site_dim == 2
    assert_allclose(ising.flip @ ising.flip, np.eye(2), atol=1e-15)
    assert_allclose(ising.edge_field, -0.5 * models.PAULI_Z, atol=1e-15)
    # the flip really is a symmetry of the bond
    ff = np.kron(ising.flip, ising.flip)
    m = _mat(ising.bond)
    assert_allclose(ff @ m @ ff, m, atol=1e-15)
    xx = models.get_model("xx")
    assert not np.any(xx.edge_field)
    ff = np.kron(xx.flip, xx.flip)
    m = _mat(xx.bond)
    assert_allclose(ff @ m @ ff, m, atol=1e-15)
    with pytest.raises(ConfigError):
        models.get_model("heisenberg")
