"""Coarse chains for defects in a critical lattice.

A localized defect leaves the network outside its causal cone untouched, so
conjugating each semi-infinite half of the Hamiltonian by those exterior
tensors collapses it onto a one-dimensional chain: one coarse site per scale,
couplings decaying by one third per step.  A short chain therefore carries
the entire renormalization flow of the defect.  Geometries handled here: an
open end, a modified or locked bond, an interface between two different
critical chains, and a junction of three identical half-chains.

Conventions.  w[x1, x2, x3, c] takes the left disentangler output on x1, the
middle lattice site on x2 and the right disentangler output on x3; u[y1, y2,
p, q] sends p to the isometry on its left and q to the one on its right.  A
cut isometry wL[z1, z2, e] keeps z1 for the direct site, z2 for the
disentangler leg; e is the chain index it creates.  Left-facing halves are
mirrored into this right-facing form once and then share all code paths.

Every chain coupling is stored trace-centered with its scalar offset kept
alongside; the offsets absorb the (divergent) vacuum energy of the shells
and play no role in spectra or optimization.
"""

import math
import string
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .bulk import (
    _ASCEND,
    _flip_vector,
    Layer,
    ascend_coupling,
    split_isometry,
)
from .errors import ConfigError, ShapeError
from .models import (
    PAULI_X,
    boundary_term,
    interface_term,
    ising_impurity,
    strong_bond_projector,
    yjunction_term,
)
from .serialize import load_tensors, save_tensors
from .tensor import einsum, isometry_from_environment

__all__ = [
    "WilsonSide",
    "WilsonHamiltonian",
    "ascend_shell",
    "build_boundary_wilson",
    "build_impurity_wilson",
    "build_interface_wilson",
    "build_wilson",
    "build_yjunction_wilson",
    "channel_ascend",
    "cross_center",
    "cross_left",
    "cross_right",
    "dense_hamiltonian",
    "edge_a",
    "edge_b",
    "edge_c",
    "lift_edge",
    "load_wilson",
    "mirror_coupling",
    "mirror_disentangler",
    "mirror_isometry",
    "shell_interval",
    "split_isometry_symmetric",
    "verify_fixed_point",
]

# Lifting maps, each verified against a brute-force contraction in the tests.
# Operand order: bra tensors left to right, then the operator, then ket
# tensors; outputs are (o1, o2, i1, i2) on the new pair of legs.
_LIFT = "xmE,rxsy,yme->rEse"
_EDGE = (
    "APE,BgPQ,QmnC,ABab,ape,bgpq,qmnc->ECec",
    "aPE,BGPQ,QmnC,BGbg,ape,bgpq,qmnc->ECec",
    "aPE,bGPQ,QMnC,GMgm,ape,bgpq,qmnc->ECec",
)
_CROSS = (
    "APE,BgPQ,dQF,ABab,ape,bgpq,dqf->EFef",
    "aPE,BGPQ,dQF,BGbg,ape,bgpq,dqf->EFef",
    "aPE,bGPQ,DQF,GDgd,ape,bgpq,dqf->EFef",
)

_GEOMETRIES = ("boundary", "impurity", "interface", "yjunction", "fusion")
_SIDE_LABELS = {
    "boundary": ("right",),
    "impurity": ("left", "right"),
    "interface": ("left", "right"),
    "yjunction": ("a", "b", "c"),
    "fusion": ("left", "right"),
}


def mirror_disentangler(u):
    """Reflect a disentangler: swap fine legs and swap coarse outputs."""
    return np.transpose(u, (1, 0, 3, 2))


def mirror_isometry(w):
    """Reflect an isometry: reverse the three fine legs."""
    return np.transpose(w, (2, 1, 0, 3))


def mirror_coupling(h):
    return np.transpose(h, (1, 0, 3, 2))


def mirror_layer(layer):
    return Layer(mirror_disentangler(layer.u), mirror_isometry(layer.w))


def lift_edge(op, iso):
    """Conjugate the second leg of a two-site operator through iso's z1.

    iso[z1, z2, e]; the operator's first leg is a spectator, z2 passes
    straight through.  Used both for the defect-adjacent bond and for
    carrying a half-lifted coupling through the next scale's cut isometry.
    """
    return einsum(_LIFT, iso, np.asarray(op, float), iso)


def edge_a(op, wl, layer):
    """Bond (cut site, first block site) onto (chain index, coarse site)."""
    return einsum(_EDGE[0], wl, layer.u, layer.w, op, wl, layer.u, layer.w)


def edge_b(op, wl, layer):
    """Bond under the disentangler onto (chain index, coarse site)."""
    return einsum(_EDGE[1], wl, layer.u, layer.w, op, wl, layer.u, layer.w)


def edge_c(op, wl, layer):
    """Bond (disentangler, block middle) onto (chain index, coarse site)."""
    return einsum(_EDGE[2], wl, layer.u, layer.w, op, wl, layer.u, layer.w)


def _channel(op, wl, u, wr, channel):
    return einsum(_ASCEND[channel], wl, u, wr, op, u, wl, wr)


def channel_ascend(op, layer, channel):
    """One position-resolved ascent channel: 0 left, 1 center, 2 right.

    Summing the three channels reproduces ascend_coupling; individually they
    carry a single fine bond class onto the coarse bond, which is what a
    translation-broken geometry needs.
    """
    if channel not in (0, 1, 2):
        raise ConfigError(f"channel must be 0, 1 or 2, got {channel!r}")
    return _channel(op, layer.w, layer.u, layer.w, channel)


def cross_left(op, wl_a, u, wl_b):
    """Bond (left cut site, disentangler) across a gap onto the two chains."""
    return einsum(_CROSS[0], wl_a, u, wl_b, op, wl_a, u, wl_b)


def cross_center(op, wl_a, u, wl_b):
    return einsum(_CROSS[1], wl_a, u, wl_b, op, wl_a, u, wl_b)


def cross_right(op, wl_a, u, wl_b):
    return einsum(_CROSS[2], wl_a, u, wl_b, op, wl_a, u, wl_b)


def shell_interval(s):
    """Half-line sites [r_s, r_{s+1}] whose bonds feed chain coupling s.

    Scale s collects 3**(s-1) bonds; consecutive shells share an endpoint
    site, so the intervals tile the half line.
    """
    if s < 1:
        raise ConfigError("shell index starts at one")
    return ((3 ** (s - 1) + 1) // 2, (3**s + 1) // 2)


def split_isometry_symmetric(w, rho1, chi_mid, sig_fine, sig_coarse, iters=100):
    """Parity-pure split of an isometry across its first leg.

    Same objective as split_isometry, but with on-site symmetry vectors for
    the fine and coarse legs every column of the lower factor is confined to
    one parity sector, and per-column labels come back with the factors.
    With ``sig_fine`` None this defers to the unconstrained split.

    Returns (wU, wL, fidelity, e_signature).
    """
    if sig_fine is None:
        wu, wl, fid = split_isometry(w, rho1, chi_mid, iters)
        return wu, wl, fid, None
    w = np.asarray(w, float)
    d1, d2, d3, m = w.shape
    rho1 = np.asarray(rho1, float)
    sig_fine = np.asarray(sig_fine, float)
    sig_coarse = np.asarray(sig_coarse, float)
    if not 1 <= chi_mid <= d2 * d3:
        raise ShapeError(f"internal dimension {chi_mid} outside [1, {d2 * d3}]")
    if d1 * chi_mid < m:
        raise ShapeError("internal dimension too small to reach the coarse space")

    # Weighted cut matrix; candidate chain states are ranked by their
    # rho-weighted singular values within each parity sector.
    vals, vecs = np.linalg.eigh(0.5 * (rho1 + rho1.T))
    root = (vecs * np.sqrt(np.clip(vals, 0.0, None))[None, :]) @ vecs.T
    mat = einsum("abcm,mn->bcan", w, root).reshape(d2 * d3, d1 * m)
    pair = (sig_fine[:, None] * sig_fine[None, :]).reshape(-1)
    ranked = []
    for p in (1.0, -1.0):
        rows = np.where(pair == p)[0]
        if rows.size == 0:
            continue
        u_, s_, _ = np.linalg.svd(mat[rows], full_matrices=True)
        svals = np.zeros(u_.shape[1])
        svals[: s_.size] = s_
        for k in range(u_.shape[1]):
            ranked.append((svals[k], p, rows, u_[:, k]))
    ranked.sort(key=lambda t: -t[0])
    if len(ranked) < chi_mid:
        raise ShapeError("not enough sector directions for the requested split")
    wl = np.zeros((d2 * d3, chi_mid))
    esig = np.zeros(chi_mid)
    for j, (_, p, rows, vec) in enumerate(ranked[:chi_mid]):
        wl[rows, j] = vec
        esig[j] = p
    wl = wl.reshape(d2, d3, chi_mid)

    pair2 = pair.reshape(d2, d3)
    mask_low = (pair2[:, :, None] * esig[None, None, :] > 0).astype(float)
    mask_up = (
        sig_fine[:, None, None] * esig[None, :, None] * sig_coarse[None, None, :] > 0
    ).astype(float)

    fid = -np.inf
    wu = None
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="degenerate environment")
        for _ in range(max(1, iters)):
            env_up = einsum("bce,abcm,mn->aen", wl, w, rho1)
            wu = isometry_from_environment(-(env_up * mask_up), 2, prev=wu)
            wu = wu * mask_up
            env_low = einsum("aen,abcm,mn->bce", wu, w, rho1)
            wl = isometry_from_environment(-(env_low * mask_low), 2, prev=wl)
            wl = wl * mask_low
            new = float(einsum("aen,bce,abcm,mn->", wu, wl, w, rho1))
            if new - fid <= 1e-14 * max(1.0, abs(new)):
                fid = max(fid, new)
                break
            fid = new
    return wu, wl, fid, esig


def _marginal(rho2):
    one = 0.5 * (einsum("abcb->ac", rho2) + einsum("abad->bd", rho2))
    one = 0.5 * (one + one.T)
    return one / np.trace(one)


def _center(op):
    """Remove the identity component of a two-site coupling; return offset."""
    da, db = op.shape[0], op.shape[1]
    off = einsum("abab->", op) / (da * db)
    return op - off * einsum("ac,bd->abcd", np.eye(da), np.eye(db)), float(off)


def _center_matrix(mat):
    d = mat.shape[0]
    off = np.trace(mat) / d
    return mat - off * np.eye(d), float(off)


def _parity_or_none(mat, sig):
    """sig if the matrix is block diagonal in the parity grading, else None."""
    if sig is None:
        return None
    sig = np.asarray(sig, float)
    dev = np.linalg.norm(mat * (sig[:, None] * sig[None, :] < 0))
    if dev > 1e-10 * max(1.0, np.linalg.norm(mat)):
        return None
    return sig


class _HalfContext:
    """Scale-indexed tensors of one semi-infinite half, mirrored on demand."""

    def __init__(self, mera, mirrored):
        self.mera = mera
        self.mirrored = mirrored
        self.m = len(mera.transitional)
        self._dens = mera.densities()

    def layer(self, s):
        base = self.mera.transitional[s - 1] if s <= self.m else self.mera.fixed
        return mirror_layer(base) if self.mirrored else base

    def rho1(self, s):
        # Site-averaged marginal, symmetric under the mirror by construction.
        return _marginal(self._dens[min(s, self.m)])

    def sig(self, level):
        sigs = self.mera.flip_signatures
        if sigs is None:
            return None
        return np.asarray(sigs[min(level, self.m)], float)

    def coupling0(self):
        h = self.mera.shifted_coupling()
        return mirror_coupling(h) if self.mirrored else h


def _edim(w, chi_mid):
    d1, d2, d3, m = w.shape
    cm = max(min(chi_mid, d2 * d3), math.ceil(m / d1))
    if cm > d2 * d3:
        raise ShapeError("coarse dimension unreachable across the cut")
    return cm


def _crossover(ctxs, chi_mid):
    """First scale from which the one-third decay rule is applied."""
    m = max(ctx.m for ctx in ctxs)
    s0 = max(m, 1) + 1
    while any(
        _edim(c.layer(s0 - 1).w, chi_mid) != _edim(c.layer(s0).w, chi_mid)
        for c in ctxs
    ):
        s0 += 1
        if s0 > m + 4:
            raise ConfigError("chain dimensions do not stabilize")
    return s0


@dataclass
class WilsonSide:
    """One half of the lattice collapsed onto chain couplings.

    ``link`` couples the defect factor ``r_slot`` to the first chain index;
    ``terms[k]`` couples chain indices at scales (k+1, k+2).  All couplings
    are trace centered with their scalar offsets in ``offsets`` (link first).
    Past the deepest stored scale the couplings follow the exact one-third
    rule.  ``e_sigs`` carries per-column parity labels when the underlying
    network tracked an on-site symmetry.
    """

    label: str
    r_slot: int
    e_dims: list
    wls: list
    link: np.ndarray
    terms: list
    offsets: list
    e_sigs: list = None

    @property
    def s0(self):
        return len(self.e_dims)

    def e_dim(self, s):
        if s < 1:
            raise ConfigError("chain scales start at one")
        return self.e_dims[min(s, self.s0) - 1]

    def wl(self, s):
        return self.wls[min(s, self.s0) - 1]

    def e_sig(self, s):
        if self.e_sigs is None:
            return None
        return self.e_sigs[min(s, self.s0) - 1]

    def term(self, s):
        """Centered coupling on chain scales (s-1, s); defined for s >= 2."""
        if s < 2:
            raise ConfigError("side terms start at scale two")
        if s <= self.s0:
            return self.terms[s - 2]
        return self.terms[-1] / 3.0 ** (s - self.s0)


def _side_chain(ctx, label, r_slot, chi_mid, s0):
    use_sig = ctx.sig(0) is not None
    wls, e_dims, e_sigs = [], [], []
    fixed_split = None
    for s in range(1, s0 + 1):
        if s > ctx.m and fixed_split is not None:
            wl, cm, esig = fixed_split
        else:
            layer = ctx.layer(s)
            cm = _edim(layer.w, chi_mid)
            _, wl, _, esig = split_isometry_symmetric(
                layer.w,
                ctx.rho1(s),
                cm,
                ctx.sig(s - 1) if use_sig else None,
                ctx.sig(s) if use_sig else None,
            )
            if s > ctx.m:
                fixed_split = (wl, cm, esig)
        wls.append(wl)
        e_dims.append(cm)
        e_sigs.append(esig)

    # Coupling ladder with the identity part split off at every level; the
    # centered parts shrink with scale, so no catastrophic cancellation.
    h0, mu0 = _center(ctx.coupling0())
    levels = [(h0, mu0)]
    for k in range(max(0, s0 - 2)):
        nxt = ascend_coupling(levels[k][0], ctx.layer(k + 1))
        nxt, off = _center(nxt)
        levels.append((nxt, 3.0 * levels[k][1] + off))

    link, off = _center(lift_edge(levels[0][0], wls[0]))
    offsets = [off + levels[0][1]]
    terms = []
    for s in range(2, s0 + 1):
        base, mu = levels[s - 2]
        wl_low, ly = wls[s - 2], ctx.layer(s - 1)
        mid = (
            edge_a(base, wl_low, ly)
            + edge_b(base, wl_low, ly)
            + edge_c(base, wl_low, ly)
        )
        t, off = _center(lift_edge(mid, wls[s - 1]))
        terms.append(t)
        offsets.append(off + 3.0 * mu)
    return WilsonSide(
        label,
        r_slot,
        e_dims,
        wls,
        link,
        terms,
        offsets,
        e_sigs if use_sig else None,
    )


def _embed(op, left_dims, right_dims, left_slot, right_slot):
    """Pad a two-site coupling with identities on the other tensor factors."""
    lprod = int(np.prod(left_dims))
    rprod = int(np.prod(right_dims))
    if lprod * rprod > 4096:
        raise ConfigError(
            "assembled coupling too large; use the per-side terms instead"
        )
    letters = iter(string.ascii_letters)
    bra_l = [next(letters) for _ in left_dims]
    bra_r = [next(letters) for _ in right_dims]
    ket_l = [next(letters) for _ in left_dims]
    ket_r = [next(letters) for _ in right_dims]
    specs = [bra_l[left_slot] + bra_r[right_slot] + ket_l[left_slot] + ket_r[right_slot]]
    ops = [op]
    for i, d in enumerate(left_dims):
        if i != left_slot:
            specs.append(bra_l[i] + ket_l[i])
            ops.append(np.eye(int(d)))
    for i, d in enumerate(right_dims):
        if i != right_slot:
            specs.append(bra_r[i] + ket_r[i])
            ops.append(np.eye(int(d)))
    out = "".join(bra_l + bra_r + ket_l + ket_r)
    arr = np.einsum(",".join(specs) + "->" + out, *ops)
    return arr.reshape(lprod, rprod, lprod, rprod)


@dataclass
class WilsonHamiltonian:
    """Chain Hamiltonian of a defect: H = J_defect + sum_s term(s).

    Site 0 carries the defect space (dimension prod(r_dims)); site s >= 1 is
    the tensor product of one chain index per side.  All stored couplings are
    trace centered; scalar offsets are bookkept but never enter spectra.
    """

    geometry: str
    r_dims: tuple
    defect: np.ndarray
    defect_offset: float
    sides: list
    s0: int
    shift: float
    r_flip: np.ndarray = None
    # spectral shift absorbed into the defect term when it was built from a
    # host bond; add it back when quoting physical defect energies
    defect_shift: float = 0.0

    @property
    def r_dim(self):
        return int(np.prod(self.r_dims))

    def supersite_dim(self, s):
        out = 1
        for sd in self.sides:
            out *= sd.e_dim(s)
        return out

    def site_dims(self, n_sites):
        """Dimensions of chain sites 0 .. n_sites-1."""
        return [self.r_dim] + [self.supersite_dim(s) for s in range(1, n_sites)]

    def e_parity(self, s):
        """Parity labels of chain site s, or None when not tracked."""
        if s == 0:
            return None if self.r_flip is None else np.asarray(self.r_flip, float)
        out = np.ones(1)
        for sd in self.sides:
            sig = sd.e_sig(s)
            if sig is None:
                return None
            out = np.kron(out, sig)
        return out

    def term(self, s):
        """Assembled centered coupling between chain sites (s-1, s)."""
        if s < 1:
            raise ConfigError("chain terms start at scale one")
        if s == 1:
            left_dims = list(self.r_dims)
            right_dims = [sd.e_dim(1) for sd in self.sides]
            out = None
            for i, sd in enumerate(self.sides):
                part = _embed(sd.link, left_dims, right_dims, sd.r_slot, i)
                out = part if out is None else out + part
            return out
        left_dims = [sd.e_dim(s - 1) for sd in self.sides]
        right_dims = [sd.e_dim(s) for sd in self.sides]
        out = None
        for i, sd in enumerate(self.sides):
            part = _embed(sd.term(s), left_dims, right_dims, i, i)
            out = part if out is None else out + part
        return out

    def fixed_term(self):
        """Self-similar coupling: term(s) = fixed_term / 3**(s-1) deep down."""
        return self.term(self.s0) * 3.0 ** (self.s0 - 1)

    def checkpoint_tensors(self):
        out = {
            "geom_code": np.float64(_GEOMETRIES.index(self.geometry)),
            "r_dims": np.asarray(self.r_dims, float),
            "s0": np.float64(self.s0),
            "shift": np.float64(self.shift),
            "J_defect": self.defect,
            "defect_offset": np.float64(self.defect_offset),
            "defect_shift": np.float64(self.defect_shift),
        }
        if self.r_flip is not None:
            out["r_flip"] = np.asarray(self.r_flip, float)
        for i, sd in enumerate(self.sides):
            key = f"side{i}"
            out[f"{key}_rslot"] = np.float64(sd.r_slot)
            out[f"{key}_edims"] = np.asarray(sd.e_dims, float)
            out[f"{key}_link"] = sd.link
            out[f"{key}_offsets"] = np.asarray(sd.offsets, float)
            for s, t in enumerate(sd.terms, start=2):
                out[f"{key}_term_{s}"] = t
            for s, wl in enumerate(sd.wls, start=1):
                out[f"{key}_wl_{s}"] = wl
            if sd.e_sigs is not None:
                for s, sig in enumerate(sd.e_sigs, start=1):
                    out[f"{key}_esig_{s}"] = np.asarray(sig, float)
        # Conventional aliases for quick inspection of small chains.
        for s in range(1, self.s0 + 1):
            t = self.term(s)
            if t.shape[0] * t.shape[1] <= 1024:
                out[f"hW_{s}"] = t
        h_star = self.fixed_term()
        if h_star.shape[0] * h_star.shape[1] <= 1024:
            out["h_star"] = h_star
        return out

    def save(self, path):
        save_tensors(path, self.checkpoint_tensors())

    @classmethod
    def load(cls, path):
        data = load_tensors(path)
        geometry = _GEOMETRIES[int(data["geom_code"])]
        labels = _SIDE_LABELS[geometry]
        s0 = int(data["s0"])
        sides = []
        for i in range(len(labels)):
            key = f"side{i}"
            if f"{key}_link" not in data:
                break
            e_dims = [int(x) for x in np.atleast_1d(data[f"{key}_edims"])]
            terms = [data[f"{key}_term_{s}"] for s in range(2, s0 + 1)]
            wls = [data[f"{key}_wl_{s}"] for s in range(1, s0 + 1)]
            e_sigs = None
            if f"{key}_esig_1" in data:
                e_sigs = [data[f"{key}_esig_{s}"] for s in range(1, s0 + 1)]
            sides.append(
                WilsonSide(
                    label=labels[i],
                    r_slot=int(data[f"{key}_rslot"]),
                    e_dims=e_dims,
                    wls=wls,
                    link=data[f"{key}_link"],
                    terms=terms,
                    offsets=[float(x) for x in np.atleast_1d(data[f"{key}_offsets"])],
                    e_sigs=e_sigs,
                )
            )
        return cls(
            geometry=geometry,
            r_dims=tuple(int(x) for x in np.atleast_1d(data["r_dims"])),
            defect=data["J_defect"],
            defect_offset=float(data["defect_offset"]),
            sides=sides,
            s0=s0,
            shift=float(data["shift"]),
            r_flip=data.get("r_flip"),
            defect_shift=float(data.get("defect_shift", 0.0)),
        )


def load_wilson(path):
    return WilsonHamiltonian.load(path)


def dense_hamiltonian(wh, n_sites, max_dim=4096):
    """Centered chain Hamiltonian on the first n_sites as a dense matrix.

    Identity offsets are left out on purpose: differences between
    truncations and spectra are what a dense chain is for.  Returns
    (matrix, site_dims).
    """
    dims = wh.site_dims(n_sites)
    total = int(np.prod(dims))
    if total > max_dim:
        raise ConfigError(f"dense chain dimension {total} exceeds {max_dim}")
    h = np.kron(wh.defect, np.eye(total // dims[0]))
    for s in range(1, n_sites):
        da, db = dims[s - 1], dims[s]
        mat = wh.term(s).reshape(da * db, da * db)
        before = int(np.prod(dims[: s - 1]))
        after = int(np.prod(dims[s + 1 :]))
        h = h + np.kron(np.eye(before), np.kron(mat, np.eye(after)))
    return h, dims


def build_boundary_wilson(mera, model, kind="free", chi_mid=None):
    """Chain for a semi-infinite lattice ending at a wall of the given kind."""
    chi_mid = mera.chi if chi_mid is None else int(chi_mid)
    ctx = _HalfContext(mera, mirrored=False)
    s0 = _crossover([ctx], chi_mid)
    side = _side_chain(ctx, "right", 0, chi_mid, s0)
    d = mera.site_dim
    defect, off = _center_matrix(boundary_term(kind) + model.edge_field)
    sig = None if mera.flip_signatures is None else _flip_vector(model.flip, d)
    return WilsonHamiltonian(
        geometry="boundary",
        r_dims=(d,),
        defect=defect,
        defect_offset=off,
        sides=[side],
        s0=s0,
        shift=mera.shift,
        r_flip=_parity_or_none(defect, sig),
    )


def build_impurity_wilson(mera, model, alpha, chi_mid=None):
    """Chain for one altered bond; alpha = 1 is the clean hosting lattice.

    ``alpha = inf`` locks the pair into the strong-bond ground space; the
    divergent bond energy is dropped, not bookkept.
    """
    chi_mid = mera.chi if chi_mid is None else int(chi_mid)
    d = mera.site_dim
    ctx_l = _HalfContext(mera, mirrored=True)
    ctx_r = _HalfContext(mera, mirrored=False)
    s0 = _crossover([ctx_l, ctx_r], chi_mid)
    left = _side_chain(ctx_l, "left", 0, chi_mid, s0)
    right = _side_chain(ctx_r, "right", 1, chi_mid, s0)
    sig = None if mera.flip_signatures is None else _flip_vector(model.flip, d)

    if math.isinf(alpha) and alpha > 0:
        p = strong_bond_projector()
        p3 = p.reshape(d, d, p.shape[1])
        jmat = p.T @ (
            mera.shifted_coupling().reshape(d * d, d * d)
            + np.kron(PAULI_X, PAULI_X)
        ) @ p
        defect, off = _center_matrix(jmat)
        locked_l, extra_l = _center(
            einsum("xyR,xEsf,syr->RErf", p3, left.link, p3)
        )
        locked_r, extra_r = _center(
            einsum("xyR,yEsf,xsr->RErf", p3, right.link, p3)
        )
        left = replace(
            left,
            r_slot=0,
            link=locked_l,
            offsets=[left.offsets[0] + extra_l, *left.offsets[1:]],
        )
        right = replace(
            right,
            r_slot=0,
            link=locked_r,
            offsets=[right.offsets[0] + extra_r, *right.offsets[1:]],
        )
        locked_sig = None
        if sig is not None:
            pair = np.kron(sig, sig)
            labels = []
            for k in range(p.shape[1]):
                v = p[:, k]
                if np.linalg.norm(pair * v - v) < 1e-10:
                    labels.append(1.0)
                elif np.linalg.norm(pair * v + v) < 1e-10:
                    labels.append(-1.0)
                else:
                    labels = None
                    break
            locked_sig = None if labels is None else np.asarray(labels)
        return WilsonHamiltonian(
            geometry="impurity",
            r_dims=(p.shape[1],),
            defect=defect,
            defect_offset=off,
            sides=[left, right],
            s0=s0,
            shift=mera.shift,
            r_flip=_parity_or_none(defect, locked_sig),
            defect_shift=mera.shift,
        )

    j = mera.shifted_coupling() + ising_impurity(alpha)
    defect, off = _center_matrix(j.reshape(d * d, d * d))
    pair_sig = None if sig is None else np.kron(sig, sig)
    return WilsonHamiltonian(
        geometry="impurity",
        r_dims=(d, d),
        defect=defect,
        defect_offset=off,
        sides=[left, right],
        s0=s0,
        shift=mera.shift,
        r_flip=_parity_or_none(defect, pair_sig),
        defect_shift=mera.shift,
    )


def build_interface_wilson(mera_a, model_a, mera_b, model_b, alpha, chi_mid=None):
    """Chain for two different critical half-lattices joined by one bond."""
    if not math.isfinite(alpha):
        raise ConfigError("interface coupling must be finite")
    if chi_mid is None:
        chi_mid = max(mera_a.chi, mera_b.chi)
    da, db = mera_a.site_dim, mera_b.site_dim
    ctx_a = _HalfContext(mera_a, mirrored=True)
    ctx_b = _HalfContext(mera_b, mirrored=False)
    s0 = _crossover([ctx_a, ctx_b], chi_mid)
    left = _side_chain(ctx_a, "left", 0, chi_mid, s0)
    right = _side_chain(ctx_b, "right", 1, chi_mid, s0)
    j = (
        interface_term(alpha)
        + np.einsum("ac,bd->abcd", model_a.edge_field, np.eye(db))
        + np.einsum("ac,bd->abcd", np.eye(da), model_b.edge_field)
    )
    defect, off = _center_matrix(j.reshape(da * db, da * db))
    sig = None
    if mera_a.flip_signatures is not None and mera_b.flip_signatures is not None:
        sig = np.kron(_flip_vector(model_a.flip, da), _flip_vector(model_b.flip, db))
    # The builders assume a common spectral shift convention per side; the
    # joining bond itself is not shifted.
    return WilsonHamiltonian(
        geometry="interface",
        r_dims=(da, db),
        defect=defect,
        defect_offset=off,
        sides=[left, right],
        s0=s0,
        shift=0.5 * (mera_a.shift + mera_b.shift),
        r_flip=_parity_or_none(defect, sig),
    )


def build_yjunction_wilson(mera, model, alpha, chi_mid=None):
    """Chain for three half-lattices meeting at a triangle of bonds."""
    if not math.isfinite(alpha):
        raise ConfigError("junction coupling must be finite")
    chi_mid = mera.chi if chi_mid is None else int(chi_mid)
    d = mera.site_dim
    ctx = _HalfContext(mera, mirrored=False)
    s0 = _crossover([ctx], chi_mid)
    proto = _side_chain(ctx, "a", 0, chi_mid, s0)
    sides = [proto, replace(proto, label="b", r_slot=1), replace(proto, label="c", r_slot=2)]
    eye = np.eye(d)
    field = model.edge_field
    j = yjunction_term(alpha).reshape(d**3, d**3)
    j = (
        j
        + np.kron(field, np.kron(eye, eye))
        + np.kron(eye, np.kron(field, eye))
        + np.kron(eye, np.kron(eye, field))
    )
    defect, off = _center_matrix(j)
    sig = None
    if mera.flip_signatures is not None:
        s1 = _flip_vector(model.flip, d)
        sig = np.kron(s1, np.kron(s1, s1))
    return WilsonHamiltonian(
        geometry="yjunction",
        r_dims=(d, d, d),
        defect=defect,
        defect_offset=off,
        sides=sides,
        s0=s0,
        shift=mera.shift,
        r_flip=_parity_or_none(defect, sig),
    )


_BUILDERS = {
    "boundary": build_boundary_wilson,
    "impurity": build_impurity_wilson,
    "interface": build_interface_wilson,
    "yjunction": build_yjunction_wilson,
}


def build_wilson(geometry, **kwargs):
    """Dispatch to the chain builder for the given defect geometry."""
    if geometry not in _BUILDERS:
        raise ConfigError(f"unknown defect geometry {geometry!r}")
    return _BUILDERS[geometry](**kwargs)


def ascend_shell(mera, s, chi_mid=None):
    """Explicit centered chain coupling at scale s for a right-facing cut.

    Built without the one-third shortcut, so it is the reference the decay
    diagnostics compare against.
    """
    if s < 1:
        raise ConfigError("chain scales start at one")
    ctx = _HalfContext(mera, mirrored=False)
    side = _side_chain(ctx, "right", 0, chi_mid or mera.chi, max(s, 2))
    return side.link if s == 1 else side.terms[s - 2]


def verify_fixed_point(mera, s_max=8, chi_mid=None):
    """Worst relative deviation of consecutive chain couplings from 1/3 decay.

    Couplings are built explicitly scale by scale (no decay rule) and
    compared in the settled regime: the first pair sits two scales past the
    transitional stack, where the flowing part of the coupling has died off.
    A network whose centered couplings vanish identically comes out as
    exactly zero.  Deep scales eventually drown in optimization error (the
    signal shrinks by 1/3 per scale, the error does not), so very large
    ``s_max`` makes the diagnostic strictly harsher.
    """
    first = len(mera.transitional) + 4
    if s_max < first:
        raise ConfigError(f"need s_max >= {first} for one settled pair")
    ctx = _HalfContext(mera, mirrored=False)
    side = _side_chain(ctx, "right", 0, chi_mid or mera.chi, s_max)
    worst = 0.0
    for s in range(first, s_max + 1):
        prev, cur = side.terms[s - 3], side.terms[s - 2]
        if prev.shape != cur.shape:
            continue
        ref = np.linalg.norm(prev) / 3.0
        if ref < 1e-14:
            continue
        worst = max(worst, float(np.linalg.norm(cur - prev / 3.0) / ref))
    return worst
