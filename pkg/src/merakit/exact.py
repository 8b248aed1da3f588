"""Independent reference solvers: dense/sparse diagonalization and free fermions.

These never touch the tensor-network code; they exist so the network results
can be checked against something solved by a completely different route.
"""

import heapq
import math

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigError
from .models import PAULI_Z, boundary_term, ising_bulk, ising_impurity

ZERO_MODE_TOL = 1e-8


# ---------------------------------------------------------------------------
# dense / sparse diagonalization of arbitrary local terms


def _term_matrix(n_sites, sites, op, d=2):
    """Embed op acting on the given sites into the full d^n space (sparse)."""
    k = len(sites)
    dim_op = d**k
    op = np.asarray(op, dtype=np.float64)
    if op.ndim == 2 * k:
        op = op.reshape(dim_op, dim_op)
    if op.shape != (dim_op, dim_op):
        raise ConfigError(f"operator on {k} sites must be {dim_op}x{dim_op}, got {op.shape}")
    if len(set(sites)) != k:
        raise ConfigError(f"repeated site in {sites}")
    if any(s < 0 or s >= n_sites for s in sites):
        raise ConfigError(f"site out of range in {sites}")

    order = np.argsort(sites)
    axes = list(order) + [k + int(o) for o in order]
    op_sorted = op.reshape((d,) * (2 * k)).transpose(axes)
    lo, hi = min(sites), max(sites)
    width = hi - lo + 1
    if width == k:
        op_win = op_sorted.reshape(dim_op, dim_op)
    else:
        # lift to the full window by tensoring identities into the gaps;
        # tensordot appends each identity's (out, in) legs at the tail
        occupied = {s - lo for s in sites}
        t = op_sorted
        for _ in range(width - k):
            t = np.tensordot(t, np.eye(d), axes=0)
        out_order, in_order = [], []
        ops_seen = ins_seen = 0
        for w in range(width):
            if w in occupied:
                out_order.append(ops_seen)
                in_order.append(k + ops_seen)
                ops_seen += 1
            else:
                out_order.append(2 * k + 2 * ins_seen)
                in_order.append(2 * k + 2 * ins_seen + 1)
                ins_seen += 1
        op_win = t.transpose(out_order + in_order).reshape(d**width, d**width)

    left = sp.identity(d**lo, format="coo")
    right = sp.identity(d ** (n_sites - hi - 1), format="coo")
    return sp.kron(sp.kron(left, sp.coo_matrix(op_win)), right, format="csr")


def build_hamiltonian(n_sites, terms, d=2):
    """Sparse CSR Hamiltonian from [(sites, operator), ...] terms."""
    dim = d**n_sites
    h = sp.csr_matrix((dim, dim))
    for sites, op in terms:
        h = h + _term_matrix(n_sites, tuple(sites), op, d)
    return h


def exact_diag(n_sites, terms, k=6, d=2, dense_threshold=4096):
    """Low spectrum and ground vector of a sum of local terms.

    Returns (energies ascending, ground vector). Dense below the threshold,
    Lanczos above it.
    """
    if n_sites < 1 or d**n_sites > 2**20:
        raise ConfigError(f"chain of {n_sites} sites is out of range for dense work")
    h = build_hamiltonian(n_sites, terms, d)
    dim = h.shape[0]
    if dim <= dense_threshold:
        vals, vecs = np.linalg.eigh(h.toarray())
        return vals[: min(k, dim)], vecs[:, 0]
    vals, vecs = spla.eigsh(h, k=min(k, dim - 1), which="SA")
    order = np.argsort(vals)
    return vals[order], vecs[:, order[0]]


def expectation(vec, n_sites, sites, op, d=2):
    mat = _term_matrix(n_sites, tuple(sites), op, d)
    return float(vec @ (mat @ vec))


def ising_chain_terms(n, left="free", right="free", alpha=None, alpha_bond=None,
                      compensate=True):
    """Open transverse-field Ising chain as a list of (sites, matrix) terms.

    Bulk bonds carry -XX + (Z1+Z2)/2; cut edges get the missing Z/2 back when
    ``compensate`` is set. ``alpha`` rescales the XX coupling on one bond to
    -alpha (defaults to the middle bond).
    """
    h2 = ising_bulk().reshape(4, 4)
    terms = [((r, r + 1), h2) for r in range(n - 1)]
    if alpha is not None:
        b = (n // 2 - 1) if alpha_bond is None else alpha_bond
        terms.append(((b, b + 1), ising_impurity(alpha).reshape(4, 4)))
    if compensate:
        terms.append(((0,), -0.5 * PAULI_Z))
        terms.append(((n - 1,), -0.5 * PAULI_Z))
    jl = boundary_term(left)
    jr = boundary_term(right)
    if np.any(jl):
        terms.append(((0,), jl))
    if np.any(jr):
        terms.append(((n - 1,), jr))
    return terms


# ---------------------------------------------------------------------------
# free-fermion solution of Ising-class chains


class FreeFermionResult:
    """Single-particle solution of a quadratic chain.

    eps holds the nonnegative mode energies (ascending). Modes below
    ZERO_MODE_TOL come from symmetry-broken boundary fields; they carry no
    energy and are left at half filling, which drops them from correlators.
    """

    def __init__(self, ground_energy, eps, w_left, v_right, phys_slice, couplings):
        self.ground_energy = float(ground_energy)
        self.eps = eps
        self._phys = phys_slice
        self._couplings = couplings
        keep = eps > ZERO_MODE_TOL
        self._pair = w_left[:, keep] @ v_right[:, keep].T

    def z_profile(self):
        """<Z(r)> for the physical sites, r = 0 .. n-1."""
        return np.diagonal(self._pair)[self._phys].copy()

    def bond_xx(self, r):
        """<X(r) X(r+1)> between physical sites r and r+1."""
        i = self._phys.start + r
        return -self._pair[i, i + 1]

    def xx_correlator(self, r, l):
        """<X(r) X(r+l)> between physical sites, as an l x l pair determinant."""
        if l < 0:
            raise ConfigError(f"separation must be nonnegative, got {l}")
        if l == 0:
            return 1.0
        i = self._phys.start + r
        if i + l >= self._pair.shape[0]:
            raise ConfigError("correlator reaches past the end of the chain")
        block = -self._pair[i:i + l, i + 1:i + 1 + l]
        return float(np.linalg.det(block))

    def edge_term_energy(self):
        """Expectation of the bond tied to the left pad site, if any."""
        if self._phys.start == 0:
            return 0.0
        return self._couplings[0] * (-self._pair[0, 1])

    def gaps(self, m):
        """The m smallest excitation energies above the ground state.

        Subset sums of the nonzero mode energies; exact zero modes only
        double degeneracies and are skipped.
        """
        eps = np.sort(self.eps[self.eps > ZERO_MODE_TOL])
        out = [0.0]
        if eps.size:
            heap = [(float(eps[0]), 0)]
            while heap and len(out) < m:
                val, i = heapq.heappop(heap)
                out.append(val)
                if i + 1 < eps.size:
                    heapq.heappush(heap, (val + float(eps[i + 1]), i + 1))
                    heapq.heappush(heap, (val - float(eps[i]) + float(eps[i + 1]), i + 1))
        return np.array(out[:m])


def _quadratic_solve(a_mat, b_mat, const):
    """Diagonalize H = a' A a + (a' B a' - a B a)/2 + const, A sym, B antisym."""
    w, eps, vt = np.linalg.svd(a_mat + b_mat)
    e0 = 0.5 * (np.trace(a_mat) - np.sum(eps)) + const
    order = np.argsort(eps)
    return e0, eps[order], w[:, order], vt.T[:, order]


def free_fermion_ising(n, left="free", right="free", alpha=None, alpha_bond=None,
                       compensate=True):
    """Exact solution of the open Ising chain via Jordan-Wigner.

    Boundary fields (fixed-* kinds) are handled by one extra unconstrained
    site per fixed end, coupled through an XX bond of the field strength;
    that site's X commutes with the Hamiltonian, so each of its sectors
    reproduces the chain with a +-X field. The construction keeps the
    Hamiltonian quadratic.
    """
    for kind in (left, right):
        if kind not in ("free", "fixed-up", "fixed-down"):
            raise ConfigError(f"unknown boundary kind {kind!r}")
    if left != "free" and right != "free":
        # two symmetry-breaking ends make the padded spectrum a union over
        # relative-sign sectors; refusing beats returning the wrong sector
        raise ConfigError("at most one fixed end is supported")
    pad_l = int(left != "free")
    pad_r = int(right != "free")
    m = n + pad_l + pad_r
    lo = pad_l
    fields = np.zeros(m)
    fields[lo:lo + n] = -1.0
    # bond packaging leaves half a field at each cut edge
    if not compensate:
        fields[lo] += 0.5
        fields[lo + n - 1] += 0.5
    couplings = np.zeros(m - 1)
    couplings[lo:lo + n - 1] = -1.0
    if alpha is not None:
        if alpha < 0:
            raise ConfigError(f"impurity strength must be >= 0, got {alpha}")
        b = (n // 2 - 1) if alpha_bond is None else alpha_bond
        couplings[lo + b] = -alpha
    if pad_l:
        couplings[0] = 1.0 if left == "fixed-up" else -1.0
    if pad_r:
        couplings[m - 2] = 1.0 if right == "fixed-up" else -1.0

    a_mat = np.zeros((m, m))
    b_mat = np.zeros((m, m))
    a_mat[np.arange(m), np.arange(m)] = -2.0 * fields
    for r in range(m - 1):
        a_mat[r, r + 1] = a_mat[r + 1, r] = couplings[r]
        b_mat[r, r + 1] = couplings[r]
        b_mat[r + 1, r] = -couplings[r]
    e0, eps, w, v = _quadratic_solve(a_mat, b_mat, float(np.sum(fields)))
    return FreeFermionResult(e0, eps, w, v, slice(lo, lo + n), couplings)


def free_fermion_xx(n):
    """Open XX chain: ground energy and <Z> profile from the hopping matrix."""
    t = np.zeros((n, n))
    for r in range(n - 1):
        t[r, r + 1] = t[r + 1, r] = 2.0
    vals, vecs = np.linalg.eigh(t)
    occ = vals < 0.0
    energy = float(np.sum(vals[occ]))
    dens = np.sum(vecs[:, occ] ** 2, axis=1)
    return energy, 1.0 - 2.0 * dens


def boundary_energy(kind, n=4000, window=100, sol=None):
    """Excess energy of one boundary relative to the homogeneous bulk.

    Sums the boundary term plus the first window bond energies, then removes
    the bulk share: window - 1/2 sites worth at -4/pi each. The window error
    is O(1/window^2) plus window times the O(1/n^2) per-bond bias, so a
    window near sqrt(n) is about optimal. Pass a precomputed solution for
    the same (kind, n) to skip the solve.
    """
    if sol is None:
        sol = free_fermion_ising(n, left=kind, right="free")
    z = sol.z_profile()
    total = -0.5 * z[0] + sol.edge_term_energy()
    for r in range(window - 1):
        total += -sol.bond_xx(r) - 0.5 * (z[r] + z[r + 1])
    return total - (window - 0.5) * (-4.0 / math.pi)


def ising_xx_correlator(l):
    """<X(0) X(l)> of the infinite homogeneous critical chain.

    Toeplitz determinant over the pair function 2 / (pi (2m - 1)); the first
    two values are 2/pi and 16/(3 pi^2). Computed through slogdet so large
    separations stay finite.
    """
    if l < 0:
        raise ConfigError(f"separation must be nonnegative, got {l}")
    if l == 0:
        return 1.0
    i = np.arange(l, dtype=np.float64)
    m = i[None, :] - i[:, None] + 1.0
    mat = 2.0 / (math.pi * (2.0 * m - 1.0))
    sign, logdet = np.linalg.slogdet(mat)
    return float(sign * math.exp(logdet))
