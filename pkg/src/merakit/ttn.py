"""Tree optimizer for defect chains.

A chain built by the Wilson construction is closed with a line of isometries
v_1 .. v_M, each fusing the block below with one chain site, plus a single
scale-invariant tensor reused at every deeper scale.  Couplings decay by a
third per scale, so the block operators converge and the energy of the
semi-infinite chain is a number with an explicit geometric tail bound.

Index conventions: v_s has legs (block_{s-1}, site_s, block_s) with block_0
the defect space.  Chain site s is the tensor product of one index per chain
side; couplings between consecutive sites act on matching side factors only,
and are conjugated through one chain tensor, never assembled on the full
product space.
"""

import string
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg

from .errors import ConfigError, ConvergenceError, ShapeError
from .serialize import load_tensors, save_tensors
from .tensor import einsum, isometry_from_environment, ttr
from .wilson import _embed


def _v_mat(v):
    return np.ascontiguousarray(v).reshape(-1, v.shape[-1])


def _e_dims(wh, s):
    return [sd.e_dim(s) for sd in wh.sides]


def _sym(mat):
    return 0.5 * (mat + mat.T)


def _conj_half(v, e_dims, slot, term):
    """Carry one side's coupling through the chain tensor below it.

    ``v`` has legs (block, site, block'); the site leg factorizes over the
    chain sides and the coupling grabs factor ``slot`` plus one still-free
    upper index.  The block leg underneath is an identity line, so the two
    copies of ``v`` trace over it.  Output legs: (block'-bra, upper-bra,
    block'-ket, upper-ket).
    """
    v3 = v.reshape(v.shape[0], *e_dims, v.shape[-1])
    pool = iter(string.ascii_letters)
    a = next(pool)
    d_bra = [next(pool) for _ in e_dims]
    d_ket = list(d_bra)
    d_ket[slot] = next(pool)
    b_bra, b_ket = next(pool), next(pool)
    up_bra, up_ket = next(pool), next(pool)
    spec = (
        a + "".join(d_bra) + b_bra
        + "," + d_bra[slot] + up_bra + d_ket[slot] + up_ket
        + "," + a + "".join(d_ket) + b_ket
        + "->" + b_bra + up_bra + b_ket + up_ket
    )
    return einsum(spec, v3, term, v3)


def _gap_density(v, e_dims, slot, rho):
    """Trace a chain tensor against its block density, keeping one factor.

    Output legs: (block-bra, factor-bra, block-ket, factor-ket); the factor
    is side ``slot`` of the site leg.  Used by the upper environment diagram.
    """
    v3 = v.reshape(v.shape[0], *e_dims, v.shape[-1])
    pool = iter(string.ascii_letters)
    b_bra, b_ket = next(pool), next(pool)
    d_bra = [next(pool) for _ in e_dims]
    d_ket = list(d_bra)
    d_ket[slot] = next(pool)
    c_bra, c_ket = next(pool), next(pool)
    spec = (
        b_bra + "".join(d_bra) + c_bra
        + "," + b_ket + "".join(d_ket) + c_ket
        + "," + c_ket + c_bra
        + "->" + b_bra + d_bra[slot] + b_ket + d_ket[slot]
    )
    return einsum(spec, v3, v3, rho)


def _lambda_matrix(wh, s, v_prev):
    """Coupling between the block and chain site s, as a dense matrix.

    Each side's two-site coupling is conjugated through the chain tensor
    below and padded with identities over the other sides' factors; the
    full supersite product is never formed.
    """
    if s == 1:
        n = wh.r_dim * wh.supersite_dim(1)
        return wh.term(1).reshape(n, n)
    if v_prev is None:
        raise ConfigError("couplings past scale one need the chain tensor below")
    b = v_prev.shape[-1]
    dims = _e_dims(wh, s)
    n = b * int(np.prod(dims))
    out = np.zeros((n, n))
    for i, sd in enumerate(wh.sides):
        half = _conj_half(v_prev, _e_dims(wh, s - 1), i, sd.term(s))
        out += _embed(half, [b], dims, 0, i).reshape(n, n)
    return out


def block_operator(wh, s, h_prev, v_prev=None):
    """Dense Hamiltonian on (block ⊗ site s) before truncation."""
    if s < 1:
        raise ConfigError("block scales start at one")
    lam = _lambda_matrix(wh, s, v_prev)
    h_prev = np.asarray(h_prev, float)
    d = wh.supersite_dim(s)
    if h_prev.shape[0] * d != lam.shape[0]:
        raise ShapeError(
            f"block of dim {h_prev.shape[0]} does not match scale {s} coupling"
        )
    return np.kron(h_prev, np.eye(d)) + lam


def block_ladder(wh, vs, v_star=None, s_top=None):
    """Truncated block operators H_0 .. H_{s_top}; index 0 is the defect."""
    if s_top is None:
        s_top = len(vs)
    blocks = [np.asarray(wh.defect, float)]
    v_prev = None
    for s in range(1, s_top + 1):
        v = vs[s - 1] if s <= len(vs) else v_star
        if v is None:
            raise ConfigError(
                "ladder past the stored tensors needs the scale-invariant one"
            )
        big = block_operator(wh, s, blocks[-1], v_prev)
        m = _v_mat(v)
        blocks.append(_sym(m.T @ big @ m))
        v_prev = v
    return blocks


def descend_block_density(v, rho):
    """Reduced density on the block below: trace the site leg pair."""
    return einsum("adb,bc,edc->ae", v, rho, v)


def fixed_block_density(v_star, tol=1e-11, max_iter=5000, rho0=None):
    """Stationary block density of the scale-invariant tensor.

    Power iteration on the descent map, symmetrized and trace-normalized
    every step; a stalled iteration falls back to a dense eigenvector of the
    map when the block is small enough.
    """
    if v_star.shape[0] != v_star.shape[-1]:
        raise ShapeError("scale-invariant tensor needs equal block dims")
    n = v_star.shape[0]
    rho = np.eye(n) / n if rho0 is None else np.array(rho0, float)
    rho = _sym(rho)
    rho /= np.trace(rho)
    diff = np.inf
    for _ in range(max_iter):
        new = _sym(descend_block_density(v_star, rho))
        new /= np.trace(new)
        diff = float(np.linalg.norm(new - rho))
        rho = new
        if diff < tol:
            return rho
    if n <= 64:
        k = einsum("adb,edc->aebc", v_star, v_star).reshape(n * n, n * n)
        vals, vecs = np.linalg.eig(k)
        i = int(np.argmax(vals.real - np.abs(vals.imag)))
        if abs(vals[i] - 1.0) > 1e-8:
            raise ConvergenceError(
                f"descent map has no unit eigenvalue ({vals[i]:.6f})"
            )
        rho = _sym(vecs[:, i].real.reshape(n, n))
        tr = np.trace(rho)
        if abs(tr) < 1e-12:
            raise ConvergenceError("stationary density is traceless")
        return rho / tr
    raise ConvergenceError(
        f"block density iteration stalled at step difference {diff:.3e}"
    )


def density_ladder(wh, vs, rho_top, v_star=None, s_top=None):
    """Block densities rho_0 .. rho_{s_top}, descending from the top one."""
    if s_top is None:
        s_top = len(vs)
    rhos = [None] * (s_top + 1)
    rhos[s_top] = rho_top
    for s in range(s_top, 0, -1):
        v = vs[s - 1] if s <= len(vs) else v_star
        if v is None:
            raise ConfigError(
                "ladder past the stored tensors needs the scale-invariant one"
            )
        rhos[s - 1] = descend_block_density(v, rhos[s])
    if rhos[0].shape[0] != wh.r_dim:
        raise ShapeError("chain tensors do not end on the defect space")
    return rhos


def environment(wh, s, vs, blocks, rhos, v_star=None, s_top=None):
    """One-sided energy derivative with respect to the chain tensor at s.

    Three diagrams: the block below and the coupling at s (combined through
    the untruncated block operator), and the coupling at s+1 conjugated
    through the tensor above with its density, present for s < s_top.  The
    energy moves as 2 * tTr(env, delta) for a perturbation delta.
    """
    if s_top is None:
        s_top = len(rhos) - 1
    v = vs[s - 1] if s <= len(vs) else v_star
    v_prev = None
    if s >= 2:
        v_prev = vs[s - 2] if s - 1 <= len(vs) else v_star
    big = block_operator(wh, s, blocks[s - 1], v_prev)
    env = (big @ _v_mat(v) @ rhos[s]).reshape(v.shape)
    if s < s_top:
        v_up = vs[s] if s + 1 <= len(vs) else v_star
        if v_up is None:
            raise ConfigError("environment needs the tensor at the next scale")
        dims_here = _e_dims(wh, s)
        dims_up = _e_dims(wh, s + 1)
        v3 = v.reshape(v.shape[0], *dims_here, v.shape[-1])
        for i, sd in enumerate(wh.sides):
            gap = _gap_density(v_up, dims_up, i, rhos[s + 1])
            term = sd.term(s + 1)
            pool = iter(string.ascii_letters)
            a = next(pool)
            d_ket = [next(pool) for _ in dims_here]
            d_bra = list(d_ket)
            d_bra[i] = next(pool)
            b_bra, b_ket = next(pool), next(pool)
            up_bra, up_ket = next(pool), next(pool)
            spec = (
                a + "".join(d_ket) + b_ket
                + "," + d_bra[i] + up_bra + d_ket[i] + up_ket
                + "," + b_bra + up_bra + b_ket + up_ket
                + "->" + a + "".join(d_bra) + b_bra
            )
            env += einsum(spec, v3, term, gap).reshape(v.shape)
    return env


def _tail_norm(wh, s):
    return float(sum(np.linalg.norm(sd.term(s)) for sd in wh.sides))


@dataclass
class ChainState:
    """One consistent evaluation of the tree: operators, densities, energy."""

    energy: float
    bracket: float
    blocks: list
    rhos: list
    s_star: int


def chain_energy(wh, vs, v_star, s_star=None, rho0=None):
    """Energy of the semi-infinite chain under the tree, with a tail bound.

    The ladder is followed with the scale-invariant tensor until the
    remaining couplings are numerically negligible; everything beyond
    contributes at most ``bracket`` in absolute value.
    """
    if v_star is None:
        raise ConfigError("chain energy needs the scale-invariant tensor")
    m = len(vs)
    if s_star is None:
        s_star = max(m + 2, wh.s0 + 2)
        base = max(1.0, _tail_norm(wh, wh.s0))
        while _tail_norm(wh, s_star) > 1e-13 * base and s_star < m + 45:
            s_star += 1
    blocks = block_ladder(wh, vs, v_star=v_star, s_top=s_star)
    rho_star = fixed_block_density(v_star, rho0=rho0)
    rhos = density_ladder(wh, vs, rho_star, v_star=v_star, s_top=s_star)
    energy = ttr(rho_star, blocks[s_star])
    bracket = 0.5 * _tail_norm(wh, s_star)
    return ChainState(energy, bracket, blocks, rhos, s_star)


def _lowest_plain(big, keep):
    n = big.shape[0]
    if n <= 4096 or keep >= n - 1:
        vals, vecs = np.linalg.eigh(big)
        return vecs[:, :keep], vals[:keep]
    vals, vecs = scipy.sparse.linalg.eigsh(big, k=keep, which="SA")
    order = np.argsort(vals)
    return vecs[:, order], vals[order]


def _lowest_by_sector(big, sector, keep):
    """Lowest states of a parity-commuting operator, sector by sector.

    Any off-sector weight (roundoff from upstream) is projected out rather
    than mixed in.  Ties between sectors resolve toward even, so the result
    is deterministic.  Returns (columns, labels, values).
    """
    cands = []
    for p in (1.0, -1.0):
        idx = np.flatnonzero(sector * p > 0)
        if idx.size == 0:
            continue
        sub = big[np.ix_(idx, idx)]
        k = min(keep, idx.size)
        vecs, vals = _lowest_plain(sub, k)
        for j in range(k):
            cands.append((float(vals[j]), -p, idx, vecs[:, j]))
    cands.sort(key=lambda t: (t[0], t[1]))
    if len(cands) < keep:
        raise ConfigError("symmetry sectors too small for the requested block")
    v = np.zeros((big.shape[0], keep))
    pi = np.zeros(keep)
    vals = np.zeros(keep)
    for j, (val, mp, idx, vec) in enumerate(cands[:keep]):
        v[idx, j] = vec
        pi[j] = -mp
        vals[j] = val
    return v, pi, vals


def _nrg_scale(wh, s, h_prev, v_prev, chi_tilde, pi_prev):
    """One exact-diagonalization step: new chain tensor, block, labels."""
    big = block_operator(wh, s, h_prev, v_prev)
    b = h_prev.shape[0]
    d = wh.supersite_dim(s)
    keep = min(chi_tilde, b * d)
    if pi_prev is None:
        cols, _ = _lowest_plain(big, keep)
        pi_new = None
    else:
        sector = np.kron(pi_prev, wh.e_parity(s))
        cols, pi_new, _ = _lowest_by_sector(big, sector, keep)
    v = cols.reshape(b, d, keep)
    h_new = _sym(cols.T @ big @ cols)
    return v, h_new, pi_new


def nrg_init(wh, chi_tilde, m_tilde):
    """Warm start by per-scale diagonalization, keeping the lowest block.

    Returns (vs, blocks, parities); parities is None when the chain carries
    no symmetry labels, otherwise one label vector per block 0 .. m_tilde.
    """
    if m_tilde < 1:
        raise ConfigError("need at least one explicit chain tensor")
    if chi_tilde < 1:
        raise ConfigError("block dimension must be positive")
    track = wh.e_parity(0) is not None and wh.e_parity(1) is not None
    pis = [wh.e_parity(0)] if track else None
    vs = []
    blocks = [np.asarray(wh.defect, float)]
    v_prev = None
    for s in range(1, m_tilde + 1):
        v, h_new, pi_new = _nrg_scale(
            wh, s, blocks[-1], v_prev, chi_tilde, None if pis is None else pis[-1]
        )
        vs.append(v)
        blocks.append(h_new)
        if pis is not None:
            pis.append(pi_new)
        v_prev = v
    return vs, blocks, pis


def _star_isometry(wh, blocks, vs, pis):
    """Scale-invariant tensor seeded at the first repeated scale.

    The block dimension must already be stationary.  With symmetry labels
    the column pattern is forced to repeat the one below, so the tensor can
    be reused at every deeper scale without relabeling.
    """
    s = len(vs) + 1
    b = vs[-1].shape[-1]
    d = wh.supersite_dim(s)
    big = block_operator(wh, s, blocks[-1], vs[-1])
    if pis is None:
        cols, _ = _lowest_plain(big, b)
        return cols.reshape(b, d, b), None
    pi_prev = np.asarray(pis[-1])
    sector = np.kron(pi_prev, wh.e_parity(s))
    queues = {}
    for p in (1.0, -1.0):
        idx = np.flatnonzero(sector * p > 0)
        if idx.size == 0:
            queues[p] = []
            continue
        k = min(int((pi_prev == p).sum()), idx.size)
        if k == 0:
            queues[p] = []
            continue
        vecs, vals = _lowest_plain(big[np.ix_(idx, idx)], k)
        queues[p] = [(vals[j], idx, vecs[:, j]) for j in range(k)]
    cols = np.zeros((b * d, b))
    for j, p in enumerate(pi_prev):
        if not queues[p]:
            raise ConfigError(
                "symmetry sector too small for the scale-invariant pattern"
            )
        _, idx, vec = queues[p].pop(0)
        cols[idx, j] = vec
    return cols.reshape(b, d, b), pi_prev.copy()


def _parity_mask(pi_in, p_site, pi_out):
    m = pi_in[:, None, None] * p_site[None, :, None] * pi_out[None, None, :]
    return (m > 0).astype(float)


def _optimize_at(wh, chi_tilde, m_tilde, sweeps, progress):
    vs, blocks, pis = nrg_init(wh, chi_tilde, m_tilde)
    # Extend until the block dimension is stationary; the scale-invariant
    # tensor needs equal dims on both block legs.
    guard = 0
    while vs[-1].shape[0] != vs[-1].shape[-1]:
        guard += 1
        if guard > 8:
            raise ConfigError("block dimension keeps growing; raise m_tilde")
        v, h_new, pi_new = _nrg_scale(
            wh, len(vs) + 1, blocks[-1], vs[-1], chi_tilde,
            None if pis is None else pis[-1],
        )
        vs.append(v)
        blocks.append(h_new)
        if pis is not None:
            pis.append(pi_new)
    v_star, _ = _star_isometry(wh, blocks, vs, pis)

    masks = None
    star_mask = None
    if pis is not None:
        masks = [
            _parity_mask(pis[s - 1], wh.e_parity(s), pis[s])
            for s in range(1, len(vs) + 1)
        ]
        star_mask = _parity_mask(pis[-1], wh.e_parity(len(vs) + 1), pis[-1])

    state = chain_energy(wh, vs, v_star)
    history = [state.energy]
    for sweep in range(sweeps):
        # Explicit tensors, bottom up; the block above each one is refreshed
        # before the next step, densities stay fixed within the sweep.
        for s in range(1, len(vs) + 1):
            env = environment(
                wh, s, vs, state.blocks, state.rhos,
                v_star=v_star, s_top=state.s_star,
            )
            if masks is not None:
                env = env * masks[s - 1]
            v = isometry_from_environment(env, 2, prev=vs[s - 1])
            if masks is not None:
                v = v * masks[s - 1]
            vs[s - 1] = v
            big = block_operator(
                wh, s, state.blocks[s - 1], vs[s - 2] if s >= 2 else None
            )
            m = _v_mat(v)
            state.blocks[s] = _sym(m.T @ big @ m)

        # Scale-invariant tensor: sum the environments of the first two
        # repeated scales (deeper ones shrink by a third each) and keep the
        # update only if it lowers the energy.
        warm = state.rhos[state.s_star]
        state = chain_energy(wh, vs, v_star, rho0=warm)
        m = len(vs)
        env = environment(
            wh, m + 1, vs, state.blocks, state.rhos,
            v_star=v_star, s_top=state.s_star,
        )
        env = env + environment(
            wh, m + 2, vs, state.blocks, state.rhos,
            v_star=v_star, s_top=state.s_star,
        )
        if star_mask is not None:
            env = env * star_mask
        v_new = isometry_from_environment(env, 2, prev=v_star)
        if star_mask is not None:
            v_new = v_new * star_mask
        trial = chain_energy(wh, vs, v_new, rho0=warm)
        if trial.energy <= state.energy:
            v_star = v_new
            state = trial
        history.append(state.energy)
        if progress is not None:
            progress(sweep, state.energy)
        if len(history) >= 3:
            scale = max(1.0, abs(history[-1]))
            if (
                abs(history[-1] - history[-2]) < 1e-12 * scale
                and abs(history[-2] - history[-3]) < 1e-12 * scale
            ):
                break

    return DefectTTN(
        wilson=wh,
        vs=vs,
        v_star=v_star,
        rho_star=state.rhos[state.s_star],
        chi_tilde=int(chi_tilde),
        energy=state.energy,
        energy_bracket=state.bracket,
        energy_history=np.asarray(history),
        block_parities=pis,
        state=state,
    )


def optimize_defect(wh, chi_tilde, sweeps=30, m_tilde=None, grow_tol=1e-8,
                    m_tilde_max=12, progress=None):
    """Optimize the tree over a defect chain.

    With ``m_tilde`` unset the explicit region starts one scale past the
    chain's crossover and grows until the energy gain per added scale drops
    below ``grow_tol``.  Deterministic: the warm start is diagonalization,
    not noise.
    """
    if m_tilde is not None:
        return _optimize_at(wh, chi_tilde, m_tilde, sweeps, progress)
    best = None
    m = wh.s0 + 1
    while True:
        ttn = _optimize_at(wh, chi_tilde, m, sweeps, progress)
        if best is not None and best.energy - ttn.energy < grow_tol:
            return ttn if ttn.energy < best.energy else best
        best = ttn
        m = len(ttn.vs) + 1
        if m > m_tilde_max:
            return best


@dataclass
class DefectTTN:
    """Optimized tree over a defect chain.

    ``vs`` are the explicit chain tensors, ``v_star`` the one reused at all
    deeper scales, ``rho_star`` its stationary block density.  The energy is
    that of the centered chain; ``energy_bracket`` bounds the dropped tail.
    """

    wilson: object
    vs: list
    v_star: np.ndarray
    rho_star: np.ndarray
    chi_tilde: int
    energy: float
    energy_bracket: float
    energy_history: np.ndarray
    block_parities: list = None
    state: ChainState = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.state is None:
            self.state = chain_energy(self.wilson, self.vs, self.v_star)

    @property
    def m_tilde(self):
        return len(self.vs)

    @property
    def s_star(self):
        return self.state.s_star

    def blocks(self):
        """Block Hamiltonians, defect first; index s matches chain scale."""
        return self.state.blocks

    def densities(self):
        """Block densities matching blocks(); index 0 is the defect space."""
        return self.state.rhos

    def defect_energy(self):
        """Physical expectation of the defect term, offsets restored."""
        wh = self.wilson
        val = ttr(self.state.rhos[0], np.asarray(wh.defect, float))
        return val + wh.defect_offset + wh.defect_shift

    def shell_energy(self, s):
        """Physical energy of all couplings between chain sites (s-1, s).

        Shell s stands for 3**(s-1) lattice bonds per side; the centered
        expectation gets its stored offset and the spectral shift back.
        """
        wh = self.wilson
        if s < 1:
            raise ConfigError("chain scales start at one")
        if s > wh.s0 or s > len(self.vs):
            raise ConfigError("offsets past the stored scales are not tracked")
        v_prev = None if s == 1 else self.vs[s - 2]
        lam = _lambda_matrix(wh, s, v_prev)
        m = _v_mat(self.vs[s - 1])
        val = ttr(self.state.rhos[s], _sym(m.T @ lam @ m))
        bonds = 3.0 ** (s - 1)
        off = sum(sd.offsets[s - 1] + bonds * wh.shift for sd in wh.sides)
        return val + off

    def checkpoint_tensors(self):
        out = {
            "v_star": self.v_star,
            "rho_star": self.rho_star,
            "energy": np.float64(self.energy),
            "energy_bracket": np.float64(self.energy_bracket),
            "chi_tilde": np.float64(self.chi_tilde),
            "energy_history": np.asarray(self.energy_history, float),
        }
        for s, v in enumerate(self.vs, start=1):
            out[f"v_{s}"] = v
        if self.block_parities is not None:
            for s, pi in enumerate(self.block_parities):
                out[f"pi_{s}"] = np.asarray(pi, float)
        return out

    def save(self, path):
        save_tensors(path, self.checkpoint_tensors())


def load_ttn(path, wilson):
    """Rebuild a DefectTTN from a checkpoint; the chain itself is not stored."""
    data = load_tensors(path)
    vs = []
    while f"v_{len(vs) + 1}" in data:
        vs.append(data[f"v_{len(vs) + 1}"])
    pis = None
    if "pi_0" in data:
        pis = []
        while f"pi_{len(pis)}" in data:
            pis.append(data[f"pi_{len(pis)}"])
    return DefectTTN(
        wilson=wilson,
        vs=vs,
        v_star=data["v_star"],
        rho_star=data["rho_star"],
        chi_tilde=int(data["chi_tilde"]),
        energy=float(data["energy"]),
        energy_bracket=float(data["energy_bracket"]),
        energy_history=np.asarray(data["energy_history"]),
        block_parities=pis,
    )
