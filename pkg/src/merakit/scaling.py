"""Universal data and spatial profiles from optimized networks.

Spectra: the central one-site ascent channel of the homogeneous network and
the block ascent map of a defect tree are linear maps whose eigenvalue
magnitudes shrink by a fixed factor per scale; minus their base-3 logs are
the scaling dimensions, and conjugating each eigenoperator with the tracked
flip symmetry labels its sector.

Profiles: local densities at arbitrary distance r from a defect.  The joint
density of (block, two cut-adjacent coarse sites) closes on itself under
one descent step, because every tensor strictly farther from the cut
cancels against its conjugate.  Descending that object scale by scale and
walking a site's ancestry back down costs O(log r) contractions per point,
so profiles over hundreds of sites stay cheap.
"""

import math
import string
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .bulk import _DESCEND, BulkMera, Layer
from .errors import ConfigError, ConvergenceError, ShapeError
from .tensor import einsum, eig_general, ttr
from .ttn import _e_dims, _gap_density
from .wilson import _HalfContext, mirror_coupling

# Eigenvalues below this magnitude get an infinite dimension instead of a
# huge finite one; they are numerical zeros of the ascent map.
ZERO_EIGENVALUE = 1e-12

_LOG3 = math.log(3.0)


# ---------------------------------------------------------------------------
# spectra


@dataclass(frozen=True)
class ScalingSpectrum:
    """Eigenvalues of a scale map with their dimensions and sector labels.

    ``values`` are magnitude-sorted descending, so ``dimensions`` come out
    ascending. ``operators[k]`` is the matching eigenoperator as a matrix.
    ``parities`` holds +1/-1 per operator, 0 where the flip mixes it, and
    is None when no symmetry was tracked.
    """

    values: np.ndarray
    dimensions: np.ndarray
    operators: list
    parities: np.ndarray = None

    def __len__(self):
        return len(self.values)

    def dims(self, parity=None, count=None, finite=True):
        """Dimensions, optionally restricted to one parity sector."""
        keep = np.isfinite(self.dimensions) if finite else np.full(len(self), True)
        if parity is not None:
            if self.parities is None:
                raise ConfigError("spectrum carries no parity labels")
            keep &= self.parities == parity
        out = self.dimensions[keep]
        return out if count is None else out[:count]


def classify_parity(op, sig, tol=1e-6):
    """Sign of an operator under conjugation by a diagonal flip.

    Returns +1.0 or -1.0 for a definite sector and 0.0 when the operator
    mixes sectors; the label is invariant under rescaling of ``op``.
    """
    sig = np.asarray(sig, float).reshape(-1)
    op = np.asarray(op)
    if op.shape != (sig.size, sig.size):
        raise ShapeError(f"operator shape {op.shape} does not match the flip")
    norm = np.linalg.norm(op)
    if norm == 0.0:
        return 0.0
    flipped = sig[:, None] * op * sig[None, :]
    if np.linalg.norm(flipped - op) <= tol * norm:
        return 1.0
    if np.linalg.norm(flipped + op) <= tol * norm:
        return -1.0
    return 0.0


def _realify(arr):
    arr = np.asarray(arr)
    if np.iscomplexobj(arr) and np.abs(arr.imag).max() <= 1e-12 * max(
        np.abs(arr).max(), 1e-300
    ):
        return np.ascontiguousarray(arr.real)
    return arr


def _canonical_sign(op):
    if np.iscomplexobj(op):
        return op
    k = int(np.argmax(np.abs(op)))
    return -op if op.flat[k] < 0 else op


def _build_spectrum(mat, dim, count, sig, normalizer=None):
    vals, vecs = eig_general(mat)
    count = vals.size if count is None else min(int(count), vals.size)
    vals = vals[:count]
    mags = np.abs(vals)
    dims = np.full(count, np.inf)
    ok = mags > ZERO_EIGENVALUE
    dims[ok] = -np.log(mags[ok]) / _LOG3
    ops = []
    for k in range(count):
        o = _canonical_sign(_realify(vecs[:, k].reshape(dim, dim)))
        o = o / np.linalg.norm(o)
        if normalizer is not None:
            o = normalizer(o)
        ops.append(o)
    parities = None
    if sig is not None:
        parities = np.array([classify_parity(o, sig) for o in ops])
    return ScalingSpectrum(vals, dims, ops, parities)


def _pair_overlap(rho2, a, b):
    """<a(x) b(x+1)> of one-site operators against a two-site density."""
    return complex(einsum("abcd,ac,bd->", rho2, np.asarray(a), np.asarray(b)))


def bulk_spectrum(network, count=None):
    """Dimensions of one-site operators of the homogeneous network.

    ``network`` is an optimized ``BulkMera`` or a bare self-similar
    ``Layer``. The central ascent channel o -> w'(1 x o x 1)w is linear;
    its eigenvalue magnitudes shrink by 3^-Delta per scale and the identity
    is always an eigenoperator with value one.  Given the full network,
    each eigenoperator is rescaled so its adjacent-pair overlap against the
    fixed-point density equals one whenever that overlap is nonzero, and
    sector labels are attached when a flip symmetry was tracked.
    """
    rho2 = sig = None
    if isinstance(network, BulkMera):
        layer = network.fixed
        rho2 = network.rho2
        if network.flip_signatures is not None:
            sig = np.asarray(network.flip_signatures[-1], float)
    elif isinstance(network, Layer):
        layer = network
    else:
        raise ConfigError("bulk_spectrum needs a BulkMera or a Layer")
    w = layer.w
    if w.shape[3] != w.shape[1]:
        raise ShapeError("the ascent map needs a self-similar isometry")
    k = w.shape[1]
    mat = einsum("aibc,ajbd->cdij", w, w).reshape(k * k, k * k)
    normalizer = None
    if rho2 is not None:
        normalizer = lambda o: _pair_normalize(o, rho2)
    return _build_spectrum(mat, k, count, sig, normalizer)


def _pair_normalize(op, rho2, floor=1e-8):
    c = abs(_pair_overlap(rho2, op, op))
    return op if c < floor else op / math.sqrt(c)


def defect_spectrum(source, count=None):
    """Dimensions of defect operators from the scale-invariant chain tensor.

    ``source`` is an optimized defect tree or the top chain tensor itself.
    The map conjugates a block operator through one chain scale with the
    site factor untouched; eigenvalue magnitudes again shrink by 3^-Delta.
    Defect eigenoperators keep unit Frobenius norm, so mixed correlator
    amplitudes are quoted in that gauge.
    """
    sig = None
    v = source
    if hasattr(source, "v_star"):
        v = source.v_star
        if getattr(source, "block_parities", None) is not None:
            sig = np.asarray(source.block_parities[-1], float)
    v = np.asarray(v, float)
    if v.ndim != 3 or v.shape[0] != v.shape[-1]:
        raise ShapeError("defect map needs a chain tensor with equal block dims")
    n = v.shape[0]
    mat = einsum("cda,edb->abce", v, v).reshape(n * n, n * n)
    return _build_spectrum(mat, n, count, sig)


def predicted_defect_dims(alpha, levels=(0, -1)):
    """Analytic flip-odd dimensions of a bond-strength defect.

    A defect bond of strength ``alpha`` is exactly marginal; with
    theta = atan((1 - alpha)/(1 + alpha)) the odd tower reads
    2 (m + 1/4 + theta/pi)^2 over integer m. ``alpha`` may be ``inf``
    (theta -> -pi/4). Returned ascending for the requested levels.
    """
    if alpha < 0.0:
        raise ConfigError(f"defect strength must be nonnegative, got {alpha}")
    theta = math.atan2(1.0 - alpha, 1.0 + alpha)
    return sorted(2.0 * (m + 0.25 + theta / math.pi) ** 2 for m in levels)


def _scalarize(value):
    value = complex(value)
    if abs(value.imag) <= 1e-10 * (1.0 + abs(value.real)):
        return value.real
    return value


def two_point(mera, i, j, q, spectrum=None):
    """Correlator of two bulk scaling operators at separation 3^q.

    Each ascent step multiplies the value by exactly lambda_i lambda_j, so
    the result telescopes onto the adjacent-pair overlap C_ij against the
    fixed-point density. Positions are depth aligned: each operator sits at
    the centre of its causal block, q=0 meaning adjacent sites.
    """
    if q < 0:
        raise ConfigError("separation exponent must be nonnegative")
    spec = bulk_spectrum(mera) if spectrum is None else spectrum
    base = _pair_overlap(mera.rho2, spec.operators[i], spec.operators[j])
    return _scalarize((spec.values[i] * spec.values[j]) ** q * base)


def site_correlator(mera, op_a, op_b, q):
    """<a(x) b(x + 3^q)> for physical one-site operators, q >= 1.

    Both operators ride the central channel of their causal cones through q
    layers, then meet as neighbours and close against the two-site density
    at that depth.  Exact on the network for depth-aligned positions.
    """
    if q < 1:
        raise ConfigError("aligned separations start at 3^1")
    a = np.asarray(op_a, float)
    b = np.asarray(op_b, float)
    levels = len(mera.transitional)
    for s in range(1, q + 1):
        layer = mera.transitional[s - 1] if s <= levels else mera.fixed
        a = _central_ascent(a, layer.w)
        b = _central_ascent(b, layer.w)
    rho = mera.densities()[min(q, levels)]
    return ttr(np.ascontiguousarray(einsum("ac,bd->abcd", a, b)), rho)


def _central_ascent(op, w):
    return einsum("aibc,ij,ajbd->cd", w, op, w)


def impurity_correlator(ttn, mera, i, j, s, side=None, defect_spec=None,
                        bulk_spec=None):
    """<d(0) o(l)> for a defect and a bulk scaling operator, l = (3^s-1)/2.

    Each scale multiplies the value by exactly lambda~_i lambda_j; the base
    overlap is evaluated deep in the scale-invariant regime, lifting the
    bulk operator across the cut into the chain space and closing with the
    stationary joint (block, chain-factor) density.
    """
    if s < 1:
        raise ConfigError("scale index starts at one")
    wh = ttn.wilson
    if side is None:
        side = len(wh.sides) - 1
    if not 0 <= side < len(wh.sides):
        raise ConfigError(f"side {side} out of range for {wh.geometry}")
    dspec = defect_spectrum(ttn) if defect_spec is None else defect_spec
    bspec = bulk_spectrum(mera) if bulk_spec is None else bulk_spec
    top = ttn.m_tilde + 1
    wl = wh.sides[side].wl(top)
    lifted = einsum("xmE,xy,yme->Ee", wl, np.asarray(bspec.operators[j]), wl)
    gap = _gap_density(ttn.v_star, _e_dims(wh, top), side, ttn.rho_star)
    base = complex(einsum("BFbf,Bb,Ff->", gap, np.asarray(dspec.operators[i]),
                          lifted))
    lam = dspec.values[i] * bspec.values[j]
    return _scalarize(lam ** (s - 1) * base)


def fit_power_law(values, bulk_value=0.0, rs=None):
    """Least-squares exponent of |v(r) - bulk| ~ amplitude * r^-exponent.

    Returns (exponent, amplitude, residual); the residual is the rms misfit
    of log|deviation|, so a clean power law gives ~0 and curvature shows up
    directly. Positions default to 1..len(values). Points indistinguishable
    from the bulk value are dropped; needing two or more to survive.
    """
    vals = np.asarray(values, float).reshape(-1)
    if rs is None:
        rs = np.arange(1, vals.size + 1, dtype=float)
    else:
        rs = np.asarray(rs, float).reshape(-1)
    if rs.shape != vals.shape:
        raise ShapeError(f"positions {rs.shape} do not match values {vals.shape}")
    if vals.size and np.min(rs) <= 0.0:
        raise ConfigError("power-law fits need positive positions")
    dev = np.abs(vals - bulk_value)
    keep = dev > 1e-13 * max(1.0, abs(bulk_value))
    if int(keep.sum()) < 2:
        raise ConfigError("profile does not deviate from the reference value")
    x = np.log(rs[keep])
    y = np.log(dev[keep])
    slope, intercept = np.polyfit(x, y, 1)
    resid = float(np.sqrt(np.mean((y - slope * x - intercept) ** 2)))
    return -float(slope), float(math.exp(intercept)), resid


# ---------------------------------------------------------------------------
# profiles near a defect
#
# sigma_s is the joint density on (block_s, site 1, site 2) of the scale-s
# half line, legs ordered bra block/site1/site2 then the ket triple.  Site 1
# is the one absorbed directly by the cut isometry of the next descent; site
# 2 is the disentangler's near leg.  One descent step contracts the chain
# tensor, the cut isometry and the full layer; every farther tensor cancels
# against its conjugate, so the truncation to two kept sites is exact.

# fine bond n >= 4 descends from coarse bond (n-1)//3 through this channel
_BOND_CHANNEL = {1: 0, 2: 1, 0: 2}


def _cut_cap(wl, layer):
    """Cut isometry, disentangler and first full isometry as one tensor.

    Legs: (site1, site2, site3, site4, x3, chain, coarse) of the finer
    scale, the coarse leg being the site the isometry feeds one level up.
    Folding the triple first keeps every later contraction at five
    operands, which the exhaustive path search still handles comfortably.
    """
    return einsum("zpe,abpq,qcdm->zabcdem", wl, layer.u, layer.w)


@lru_cache(maxsize=None)
def _sigma_spec(n_sides, slot):
    pool = iter(string.ascii_letters)
    t_b, s1_b, s2, t_k, s1_k = (next(pool) for _ in range(5))
    b_b, b_k = next(pool), next(pool)
    e_b = [next(pool) for _ in range(n_sides)]
    e_k = list(e_b)
    e_k[slot] = next(pool)
    z_b, z_k, y1_b, y1_k = (next(pool) for _ in range(4))
    y2, x2, x3 = (next(pool) for _ in range(3))
    ops = [
        t_b + s1_b + s2 + t_k + s1_k + s2,            # sigma above
        b_b + "".join(e_b) + t_b,                     # chain tensor, bra
        b_k + "".join(e_k) + t_k,                     # chain tensor, ket
        z_b + y1_b + y2 + x2 + x3 + e_b[slot] + s1_b, # cap, bra
        z_k + y1_k + y2 + x2 + x3 + e_k[slot] + s1_k, # cap, ket
    ]
    return ",".join(ops) + "->" + b_b + z_b + y1_b + b_k + z_k + y1_k


@lru_cache(maxsize=None)
def _cut_pair_spec(n_sides, slot, left_site):
    if left_site not in (2, 3):
        raise ConfigError("cut pairs start at site 2 or 3")
    pool = iter(string.ascii_letters)
    t_b, s1_b, s2, t_k, s1_k = (next(pool) for _ in range(5))
    blk = next(pool)
    e_b = [next(pool) for _ in range(n_sides)]
    e_k = list(e_b)
    e_k[slot] = next(pool)
    o1_b, o2_b, o1_k, o2_k = (next(pool) for _ in range(4))
    z1, x3 = next(pool), next(pool)
    if left_site == 2:
        y2, x2 = next(pool), next(pool)
        cap_b = z1 + o1_b + o2_b + y2 + x2 + e_b[slot] + s1_b
        cap_k = z1 + o1_k + o2_k + y2 + x2 + e_k[slot] + s1_k
    else:
        y1 = next(pool)
        cap_b = z1 + y1 + o1_b + o2_b + x3 + e_b[slot] + s1_b
        cap_k = z1 + y1 + o1_k + o2_k + x3 + e_k[slot] + s1_k
    ops = [
        t_b + s1_b + s2 + t_k + s1_k + s2,
        blk + "".join(e_b) + t_b,
        blk + "".join(e_k) + t_k,
        cap_b,
        cap_k,
    ]
    return ",".join(ops) + "->" + o1_b + o2_b + o1_k + o2_k


def _sigma_step(sigma, v3, slot, cap):
    """One descent of the joint (block, two cut-adjacent sites) density."""
    spec = _sigma_spec(v3.ndim - 2, slot)
    return einsum(spec, sigma, v3, v3, cap, cap)


def _cut_pair(sigma, v3, slot, cap, left_site):
    """Coupling-layout density of sites (2,3) or (3,4) one level below."""
    spec = _cut_pair_spec(v3.ndim - 2, slot, left_site)
    return einsum(spec, sigma, v3, v3, cap, cap)


def _pair_here(sigma):
    """Coupling-layout density of sites (1, 2) at sigma's own scale."""
    return np.ascontiguousarray(einsum("xabxcd->abcd", sigma))


def _sigma_fixed_point(v3, slot, cap, rho_star, tol=1e-11, max_iter=4000):
    """Stationary joint density deep in the scale-invariant regime."""
    k = cap.shape[-1]
    eye = np.eye(k)
    sigma = (
        np.asarray(rho_star, float)[:, None, None, :, None, None]
        * eye[None, :, None, None, :, None]
        * eye[None, None, :, None, None, :]
    ) / float(k * k)
    for _ in range(max_iter):
        new = _sigma_step(sigma, v3, slot, cap)
        new = 0.5 * (new + new.transpose(3, 4, 5, 0, 1, 2))
        trace = float(einsum("abcabc->", new))
        if not trace > 0.0:
            raise ConvergenceError("stationary side density lost its trace")
        new /= trace
        if float(np.linalg.norm(new - sigma)) < tol:
            return new
        sigma = new
    raise ConvergenceError("stationary side density did not converge")


def _factor_marginal(rho, dims, slot):
    """One-factor marginal of a density over a product space."""
    dims = list(dims)
    rho = np.asarray(rho, float).reshape(dims + dims)
    pool = iter(string.ascii_letters)
    bra = [next(pool) for _ in dims]
    ket = list(bra)
    ket[slot] = next(pool)
    spec = "".join(bra) + "".join(ket) + "->" + bra[slot] + ket[slot]
    return einsum(spec, rho)


def _link_pair(sigma0, r_dims, slot):
    """Density of (defect factor, first site) in coupling layout."""
    dims = list(r_dims)
    k = sigma0.shape[1]
    sig8 = sigma0.reshape(dims + [k, k] + dims + [k, k])
    pool = iter(string.ascii_letters)
    bra = [next(pool) for _ in dims]
    ket = list(bra)
    ket[slot] = next(pool)
    s1_b, s2, s1_k = next(pool), next(pool), next(pool)
    spec = (
        "".join(bra) + s1_b + s2 + "".join(ket) + s1_k + s2
        + "->" + bra[slot] + s1_b + ket[slot] + s1_k
    )
    return np.ascontiguousarray(einsum(spec, sig8))


class SideProfile:
    """Local densities along one side of an optimized defect tree.

    Distance r counts lattice sites away from the defect: site 0 is the
    defect-space factor of this side, sites r >= 1 live on the half line.
    Bond r couples sites (r, r+1). Pair densities come back in coupling
    layout, ready to pair elementwise with a two-site operator.
    """

    def __init__(self, ttn, mera, side=0):
        wh = ttn.wilson
        if not 0 <= side < len(wh.sides):
            raise ConfigError(f"side {side} out of range for {wh.geometry}")
        self.ttn = ttn
        self.mera = mera
        self.side = side
        self.sd = wh.sides[side]
        self.ctx = _HalfContext(mera, mirrored=(self.sd.label == "left"))
        if self.sd.wl(1).shape[0] != mera.site_dim:
            raise ShapeError("network site dimension does not match the chain")
        self._sigmas = {}
        self._star = None
        self._caps = {}

    # -- sigma ladder ------------------------------------------------

    def _pieces(self, s):
        ttn = self.ttn
        v = ttn.vs[s - 1] if s <= ttn.m_tilde else ttn.v_star
        dims = _e_dims(ttn.wilson, s)
        v3 = np.ascontiguousarray(v).reshape(v.shape[0], *dims, v.shape[-1])
        key = min(s, ttn.m_tilde + 1)
        if key not in self._caps:
            self._caps[key] = _cut_cap(self.sd.wl(s), self.ctx.layer(s))
        return v3, self._caps[key]

    def sigma(self, s):
        """Joint (block, two cut-adjacent sites) density at scale s >= 0."""
        if s < 0:
            raise ConfigError("scales start at zero")
        if s >= self.ttn.m_tilde:
            if self._star is None:
                v3, cap = self._pieces(self.ttn.m_tilde + 1)
                self._star = _sigma_fixed_point(v3, self.side, cap,
                                                self.ttn.rho_star)
            return self._star
        if s not in self._sigmas:
            v3, cap = self._pieces(s + 1)
            self._sigmas[s] = _sigma_step(self.sigma(s + 1), v3, self.side,
                                          cap)
        return self._sigmas[s]

    # -- extraction ----------------------------------------------------

    def pair_density(self, r):
        """Density of lattice sites (r, r+1) for r >= 1, coupling layout."""
        if r < 1:
            raise ConfigError("half-line pairs start at site one")
        path = []
        while r >= 4:
            path.append(_BOND_CHANNEL[r % 3])
            r = (r - 1) // 3
        level = len(path)
        if r == 1:
            base = _pair_here(self.sigma(level))
        else:
            v3, cap = self._pieces(level + 1)
            base = _cut_pair(self.sigma(level + 1), v3, self.side, cap,
                             left_site=r)
        for k in range(level, 0, -1):
            layer = self.ctx.layer(k)
            base = einsum(_DESCEND[path[k - 1]], layer.w, layer.u, layer.w,
                          layer.u, layer.w, layer.w, base)
        return np.ascontiguousarray(base)

    def bond_density(self, r):
        """Density of bond (r, r+1), r >= 0; bond 0 touches the defect."""
        if r >= 1:
            return self.pair_density(r)
        if r != 0:
            raise ConfigError("bonds start at the defect")
        wh = self.ttn.wilson
        return _link_pair(self.sigma(0), wh.r_dims, self.sd.r_slot)

    def site_density(self, r):
        """One-site density at lattice distance r >= 0 from the defect."""
        if r == 0:
            wh = self.ttn.wilson
            return _factor_marginal(self.ttn.densities()[0], wh.r_dims,
                                    self.sd.r_slot)
        return np.ascontiguousarray(einsum("abcb->ac", self.pair_density(r)))

    # -- values ----------------------------------------------------------

    def site_value(self, r, op):
        return ttr(self.site_density(r), np.asarray(op, float))

    def bond_value(self, r, op):
        pair = self.bond_density(r)
        op = np.asarray(op, float).reshape(pair.shape)
        return ttr(pair, op)

    def host_coupling(self):
        """Physical two-site coupling in this side's orientation."""
        h = np.asarray(self.mera.hamiltonian, float)
        return mirror_coupling(h) if self.ctx.mirrored else h

    def bond_energy(self, r):
        """Physical <h(r, r+1)> of the host coupling across bond r."""
        return self.bond_value(r, self.host_coupling())


def expectation_profile(ttn, mera, op, r_max, side=0):
    """<op(r)> for r = 0 .. r_max along one side of the defect.

    r = 0 is the defect-space factor of that side; the per-site cost grows
    only logarithmically with r.
    """
    prof = SideProfile(ttn, mera, side)
    return np.array([prof.site_value(r, op) for r in range(r_max + 1)])


def boundary_excess_energy(ttn, mera, window=100):
    """Excess energy held by a boundary relative to the homogeneous bulk.

    Boundary site term plus the first ``window - 1`` bond energies, minus
    the bulk share of window - 1/2 sites. The truncation error falls off
    as the inverse square of the window.
    """
    if ttn.wilson.geometry != "boundary":
        raise ConfigError("excess energy needs the boundary geometry")
    if window < 2:
        raise ConfigError("window must cover the defect bond")
    prof = SideProfile(ttn, mera, 0)
    total = ttn.defect_energy()
    for r in range(window - 1):
        total += prof.bond_energy(r)
    return total - (window - 0.5) * mera.energy_per_site
