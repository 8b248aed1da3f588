"""Spin-chain model builders.

Every Hamiltonian used by the library is assembled from the terms defined
here. Two-site couplings are returned as (d, d, d, d) tensors with index
order (out1, out2, in1, in2), i.e. kron(a, b) reshaped; one-site terms are
plain (d, d) matrices. All builders return real symmetric tensors.

On-site fields are split half/half onto the two adjacent bonds, so a chain
cut at a site leaves that site with half its field. ``edge_field`` of a
model is the one-site term that restores the missing half at a cut edge.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

PAULI_X = np.array([[0.0, 1.0], [1.0, 0.0]])
PAULI_Z = np.array([[1.0, 0.0], [0.0, -1.0]])
# Y x Y has real entries even though Y itself does not.
_YY = -np.kron(np.array([[0.0, 1.0], [-1.0, 0.0]]), np.array([[0.0, 1.0], [-1.0, 0.0]]))

_I2 = np.eye(2)


def _bond(mat):
    d = int(round(math.sqrt(mat.shape[0])))
    return mat.reshape(d, d, d, d)


def ising_bulk():
    """Critical transverse-field Ising coupling -XX - (Z1 + Z2)/2.

    The field sign is chosen so the bulk magnetization is +2/pi; flipping it
    gives the same spectrum with <Z> negated.
    """
    mat = -np.kron(PAULI_X, PAULI_X) - 0.5 * (np.kron(PAULI_Z, _I2) + np.kron(_I2, PAULI_Z))
    return _bond(mat)


def xx_bulk():
    """Critical XX coupling XX + YY (real matrix)."""
    return _bond(np.kron(PAULI_X, PAULI_X) + _YY)


def ising_impurity(alpha):
    """Added defect bond term (1 - alpha) XX.

    alpha=1 is the clean chain, alpha=0 cancels the host bond entirely and
    decouples the two halves. Infinite alpha is not representable as a term;
    callers detect it and lock the bond with strong_bond_projector instead.
    """
    if math.isinf(alpha):
        raise ConfigError("infinite coupling has no finite bond term; lock the bond instead")
    if alpha < 0.0:
        raise ConfigError(f"impurity strength must be >= 0, got {alpha}")
    return _bond((1.0 - alpha) * np.kron(PAULI_X, PAULI_X))


def strong_bond_projector():
    """Isometry (4 x 2) onto the aligned subspace of an infinitely strong bond.

    The dominant bond term -alpha XX (alpha -> inf) locks the pair into the
    XX = +1 eigenspace. Columns are ordered so the pair flip Z x Z is diagonal
    on the locked space with signature (+1, -1).
    """
    p = np.zeros((4, 2))
    p[0, 0] = p[3, 0] = 1.0 / math.sqrt(2.0)  # (|00> + |11>)/sqrt2
    p[1, 1] = p[2, 1] = 1.0 / math.sqrt(2.0)  # (|01> + |10>)/sqrt2
    return p


def impurity_phase(alpha):
    """Angle atan((1-alpha)/(1+alpha)) controlling the defect exponents."""
    if alpha < 0.0:
        raise ConfigError(f"impurity strength must be >= 0, got {alpha}")
    return math.atan2(1.0 - alpha, 1.0 + alpha)


def boundary_term(kind):
    """One-site boundary term: zero for free, +X / -X for fixed."""
    if kind == "free":
        return np.zeros((2, 2))
    if kind == "fixed-up":
        return PAULI_X.copy()
    if kind == "fixed-down":
        return -PAULI_X.copy()
    raise ConfigError(f"unknown boundary kind {kind!r}")


def interface_term(alpha):
    """Coupling alpha XX joining two half chains."""
    return _bond(alpha * np.kron(PAULI_X, PAULI_X))


def yjunction_term(alpha):
    """Three-leg junction term -alpha (Xa Xb + Xb Xc + Xc Xa), shape (2,)*6."""
    xx = np.kron(PAULI_X, PAULI_X)
    mat = -alpha * (
        np.kron(xx, _I2) + np.kron(_I2, xx) + np.kron(PAULI_X, np.kron(_I2, PAULI_X))
    )
    return mat.reshape(2, 2, 2, 2, 2, 2)


@dataclass(frozen=True)
class SpinModel:
    """A nearest-neighbour model plus the bookkeeping the solvers need.

    flip generates the global internal symmetry (product over sites);
    edge_field is added at a cut edge to restore the half field lost there.
    """

    name: str
    site_dim: int
    bond: np.ndarray = field(repr=False)
    flip: np.ndarray = field(repr=False)
    edge_field: np.ndarray = field(repr=False)


def get_model(name):
    if name == "ising":
        return SpinModel("ising", 2, ising_bulk(), PAULI_Z.copy(), -0.5 * PAULI_Z)
    if name == "xx":
        return SpinModel("xx", 2, xx_bulk(), PAULI_Z.copy(), np.zeros((2, 2)))
    raise ConfigError(f"unknown model {name!r}")
