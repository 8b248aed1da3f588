"""Scale-invariant ternary coarse-graining network for critical spin chains.

Network geometry, physical level upward.  Sites are grouped in threes; block
j covers sites (3j, 3j+1, 3j+2).  A disentangler u_j acts on the pair
(3j-1, 3j) straddling blocks j-1 and j, after which an isometry w_j maps what
remains of block j to a single coarse site.  Index conventions:

    u[y1, y2, p, q]    y1, y2 face the fine lattice (sites 3j-1 and 3j);
                       p connects to the left isometry's third leg, q to the
                       right isometry's first leg.  Unitary over
                       (y1 y2) x (p q).
    w[x1, x2, x3, c]   x1 receives u_j's q leg, x2 is the untouched middle
                       site 3j+1, x3 feeds u_{j+1}'s p leg; c is the coarse
                       site.  Orthonormal columns over (x1 x2 x3) x (c).

A two-site coupling h[o1, o2, i1, i2] on any fine bond in the window
(3j-2 .. 3j+1) lifts to a coupling on the coarse bond (j-1, j) through one of
three channels (left, centre, right) according to which bond it occupies.
ascend_coupling sums the three channels; descend_density is the adjoint map
averaged over them, so it preserves the trace.  The identity ascends to three
times the identity, one copy per channel.

Optimization is by linearized environments: the energy is linear in any one
tensor with the rest frozen, so each update is an SVD of that tensor's
environment.  The coupling is shifted once at the bottom to make it negative
semidefinite (the shift is restored when reporting energies); every channel
is a conjugation by isometries, so negativity survives coarse-graining and
each SVD update cannot raise the energy.

Internal symmetries are kept exact by bookkeeping rather than trust: a
diagonal flip operator assigns a parity to every level (coarse parities are
products over the absorbed triple) and environments are projected onto the
parity-even sector before each update.  Spatial reflection, when requested,
works the same way through column-parity labels, with environments
symmetrized as env + Rft(env).
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ConvergenceError, ShapeError
from .serialize import load_tensors, save_tensors
from .tensor import (
    assert_isometric,
    einsum,
    isometry_from_environment,
    polar_orthonormalize,
    ttr,
)

# The three ascent channels, one per fine bond in the window.  Operand slots
# are fixed: (w_left, u, w_right, h, u, w_left, w_right), bra tensors first,
# then the coupling, then the ket tensors; output legs are (o1, o2, i1, i2)
# on the coarse bond.  Environment and descent strings are generated from
# these by _drop, which removes one operand and grafts the density onto the
# output legs, so a single set of verified strings drives everything.
_ASCEND = (
    "agmi,hcmn,nybk,ghef,fcpq,aepj,qybl->ikjl",
    "axmi,efmn,nybk,efgh,ghpq,axpj,qybl->ikjl",
    "axmi,ecmn,ndbk,cdgh,egpq,axpj,qhbl->ikjl",
)
_SLOT_H, _SLOT_U_KET, _SLOT_WL_KET, _SLOT_WR_KET = 3, 4, 5, 6


def _drop(subscripts, slot):
    lhs, out = subscripts.split("->")
    terms = lhs.split(",")
    target = terms.pop(slot)
    terms.append(out)
    return ",".join(terms) + "->" + target


_DESCEND = tuple(_drop(s, _SLOT_H) for s in _ASCEND)
_ENV_U = tuple(_drop(s, _SLOT_U_KET) for s in _ASCEND)
_ENV_WL = tuple(_drop(s, _SLOT_WL_KET) for s in _ASCEND)
_ENV_WR = tuple(_drop(s, _SLOT_WR_KET) for s in _ASCEND)


def identity_coupling(dim):
    """Two-site identity in (o1, o2, i1, i2) layout."""
    return np.eye(dim * dim).reshape(dim, dim, dim, dim)


@dataclass(frozen=True)
class Layer:
    """One coarse-graining step: a row of disentanglers under isometries."""

    u: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        u, w = np.asarray(self.u, float), np.asarray(self.w, float)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "w", w)
        k = w.shape[0]
        if u.shape != (k, k, k, k) or w.shape[:3] != (k, k, k):
            raise ShapeError(f"inconsistent layer shapes u{u.shape} w{w.shape}")
        if w.shape[3] > k**3:
            raise ShapeError("coarse dimension exceeds the block dimension")

    @property
    def chi_in(self):
        return self.w.shape[0]

    @property
    def chi_out(self):
        return self.w.shape[3]

    def validate(self, tol=1e-10):
        assert_isometric(self.u, 2, tol)
        assert_isometric(self.w, 3, tol)


@dataclass(frozen=True)
class ReflectionRep:
    """Action of spatial reflection on one level's basis: r with r @ r = 1."""

    r: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.r, float)
        object.__setattr__(self, "r", r)
        if r.ndim != 2 or r.shape[0] != r.shape[1]:
            raise ShapeError(f"reflection matrix must be square, got {r.shape}")
        if np.linalg.norm(r @ r - np.eye(r.shape[0])) > 1e-10 * r.shape[0]:
            raise ConfigError("reflection matrix must square to the identity")

    @classmethod
    def identity(cls, dim):
        return cls(np.eye(dim))

    @property
    def dim(self):
        return self.r.shape[0]

    @property
    def parities(self):
        """Per-basis-state parity; defined only in a reflection eigenbasis."""
        off = self.r - np.diag(np.diag(self.r))
        if np.linalg.norm(off) > 1e-10:
            raise ConfigError("parity labels need a diagonal reflection matrix")
        return np.sign(np.diag(self.r))


def _reflect_pairwise(t, r):
    # Two-site operator or disentangler layout: swap within each leg pair and
    # conjugate every leg by r.
    return einsum("ae,bf,cg,dh,fehg->abcd", r, r, r, r, t)


def _reflect_isometry(t, r, r_out):
    # Isometry layout: reverse the three fine legs, conjugate all four.
    return einsum("ae,bf,cg,mn,gfen->abcm", r, r, r, r_out, t)


def reflect_coupling(h, reflection):
    """Spatial reflection of a two-site coupling under the given rep."""
    return _reflect_pairwise(np.asarray(h, float), reflection.r)


def symmetrize_environment(env, reflection, coarse=None):
    """env plus its spatial reflection.

    With ``coarse`` omitted the environment is of disentangler type (all four
    legs carry ``reflection``); otherwise it is of isometry type and the last
    leg carries the ``coarse`` rep.  The output is reflection symmetric by
    construction, so an isometry extracted from it inherits the symmetry.
    """
    env = np.asarray(env, float)
    if coarse is None:
        return env + _reflect_pairwise(env, reflection.r)
    return env + _reflect_isometry(env, reflection.r, coarse.r)


def _check_coupling(h, dim):
    h = np.asarray(h, float)
    if h.shape != (dim, dim, dim, dim):
        raise ShapeError(f"coupling shape {h.shape} does not match level dim {dim}")
    return h


def ascend_coupling(h, layer):
    """Lift a two-site coupling through one layer; sums the three channels."""
    h = _check_coupling(h, layer.chi_in)
    u, w = layer.u, layer.w
    out = einsum(_ASCEND[0], w, u, w, h, u, w, w)
    for s in _ASCEND[1:]:
        out = out + einsum(s, w, u, w, h, u, w, w)
    return out


def descend_density(rho, layer):
    """Adjoint of ascend_coupling averaged over channels; trace preserving."""
    rho = _check_coupling(rho, layer.chi_out)
    u, w = layer.u, layer.w
    out = einsum(_DESCEND[0], w, u, w, u, w, w, rho)
    for s in _DESCEND[1:]:
        out = out + einsum(s, w, u, w, u, w, w, rho)
    return out / 3.0


def disentangler_environment(h, rho, layer):
    """Energy environment of the layer's disentangler.

    Linear functional: the channel energy equals tTr(env, u).  The true
    derivative of the energy with respect to the tensor is twice this, since
    bra and ket contributions coincide for symmetric h and rho.
    """
    h = _check_coupling(h, layer.chi_in)
    rho = _check_coupling(rho, layer.chi_out)
    u, w = layer.u, layer.w
    env = einsum(_ENV_U[0], w, u, w, h, w, w, rho)
    for s in _ENV_U[1:]:
        env = env + einsum(s, w, u, w, h, w, w, rho)
    return env


def isometry_environment(h, rho, layer):
    """Energy environment of the layer's isometry (left and right slots)."""
    h = _check_coupling(h, layer.chi_in)
    rho = _check_coupling(rho, layer.chi_out)
    u, w = layer.u, layer.w
    env = einsum(_ENV_WL[0], w, u, w, h, u, w, rho)
    for s in _ENV_WL[1:]:
        env = env + einsum(s, w, u, w, h, u, w, rho)
    for s in _ENV_WR:
        env = env + einsum(s, w, u, w, h, u, w, rho)
    return env


def _normalize_density(rho, mask):
    rho = 0.5 * (rho + rho.transpose(2, 3, 0, 1))
    if mask is not None:
        rho = rho * mask
    tr = einsum("abab->", rho)
    if not np.isfinite(tr) or abs(tr) < 1e-300:
        raise ConvergenceError("density trace collapsed during iteration")
    return rho / tr


def fixed_point_density(layer, tol=1e-10, max_iter=4000, rho0=None, flip_signature=None):
    """Dominant fixed point of the layer's descent map, by power iteration.

    Requires a self-similar layer (chi_in == chi_out).  The iterate is
    symmetrized as an operator, parity-projected when a flip signature is
    given, and trace-normalized after every step.  Converged when successive
    iterates differ by less than ``tol`` in Frobenius norm.
    """
    if layer.chi_in != layer.chi_out:
        raise ShapeError("fixed point needs a self-similar layer")
    k = layer.chi_in
    mask = None
    if flip_signature is not None:
        s = np.asarray(flip_signature, float)
        mask = _parity_mask(s, s, s, s)
    if rho0 is None:
        rho = identity_coupling(k) / k**2
    else:
        rho = _check_coupling(np.array(rho0, float), k)
    rho = _normalize_density(rho, mask)
    for _ in range(max_iter):
        new = _normalize_density(descend_density(rho, layer), mask)
        diff = float(np.linalg.norm(new - rho))
        rho = new
        if diff < tol:
            return rho
    raise ConvergenceError(
        f"density iteration stalled at step difference {diff:.3e} (tol {tol:.1e})"
    )


def _parity_mask(*sigs):
    prod = sigs[0]
    for s in sigs[1:]:
        prod = np.multiply.outer(prod, s)
    return (prod > 0).astype(float)


def _flip_vector(flip, dim):
    f = np.asarray(flip, float)
    if f.ndim == 2:
        if f.shape != (dim, dim):
            raise ShapeError(f"flip shape {f.shape} does not match site dim {dim}")
        if np.linalg.norm(f - np.diag(np.diag(f))) > 1e-12:
            raise ConfigError("flip operator must be diagonal")
        f = np.diag(f)
    if f.shape != (dim,) or np.any(np.abs(np.abs(f) - 1.0) > 1e-12):
        raise ConfigError("flip signature must consist of +1 and -1 entries")
    return np.sign(f)


def _reflect_columns(mat, pin, sigma):
    # mat: (k^3, m) with column c wanted in the sigma[c] reflection sector.
    k = pin.shape[0]
    t = mat.reshape(k, k, k, -1)
    scale = pin[:, None, None] * pin[None, :, None] * pin[None, None, :]
    refl = (t.transpose(2, 1, 0, 3) * scale[..., None]).reshape(k**3, -1)
    return refl * sigma[None, :]


def _candidate_columns(k, sig, pin):
    """Coarse basis candidates in truncation order.

    Plain mode (pin None): computational basis triples.  Reflection mode:
    palindromic triples and symmetric/antisymmetric pair combinations, each
    of definite reflection parity.  Every candidate also carries its flip
    parity when a level signature is given.  Candidates are mutually
    orthonormal, so any subset forms an isometry.
    """
    cols, z2s, refls = [], [], []
    shape = (k, k, k)
    for t in range(k**3):
        a, b, c = np.unravel_index(t, shape)
        z2 = None if sig is None else sig[a] * sig[b] * sig[c]
        if pin is None:
            v = np.zeros(k**3)
            v[t] = 1.0
            cols.append(v)
            z2s.append(z2)
            refls.append(None)
            continue
        rt = int(np.ravel_multi_index((c, b, a), shape))
        if rt < t:
            continue
        sgn = pin[a] * pin[b] * pin[c]
        if rt == t:
            v = np.zeros(k**3)
            v[t] = 1.0
            cols.append(v)
            z2s.append(z2)
            refls.append(sgn)
        else:
            for pm in (1.0, -1.0):
                v = np.zeros(k**3)
                v[t] = 1.0 / np.sqrt(2.0)
                v[rt] = pm / np.sqrt(2.0)
                cols.append(v)
                z2s.append(z2)
                refls.append(pm * sgn)
    return cols, z2s, refls


def _select_columns(k, m, sig, pin, required):
    cols, z2s, refls = _candidate_columns(k, sig, pin)
    if required is None:
        idx = list(range(m))
    else:
        req_sig, req_pin = required
        idx, used = [], set()
        for c in range(m):
            for i in range(len(cols)):
                if i in used:
                    continue
                if req_sig is not None and z2s[i] != req_sig[c]:
                    continue
                if req_pin is not None and refls[i] != req_pin[c]:
                    continue
                idx.append(i)
                used.add(i)
                break
            else:
                raise ConfigError(
                    "cannot match the prescribed parity pattern at the top level"
                )
    if len(idx) < m:
        raise ShapeError(f"coarse dimension {m} exceeds available columns")
    mat = np.stack([cols[i] for i in idx], axis=1)
    sig_out = None if sig is None else np.array([z2s[i] for i in idx])
    pin_out = None if pin is None else np.array([refls[i] for i in idx])
    return mat, sig_out, pin_out


def _init_isometry(k, m, rng, noise, sig, pin, required=None):
    mat, sig_out, pin_out = _select_columns(k, m, sig, pin, required)
    mat = mat + noise * rng.standard_normal(mat.shape)
    if sig is not None:
        mask = _parity_mask(sig, sig, sig, sig_out).reshape(k**3, m)
        mat = mat * mask
    if pin is not None:
        mat = 0.5 * (mat + _reflect_columns(mat, pin, pin_out))
    w = polar_orthonormalize(mat.reshape(k, k, k, m), 3)
    return w, sig_out, pin_out


def _init_disentangler(k, rng, noise, sig, pin):
    mat = np.eye(k * k) + noise * rng.standard_normal((k * k, k * k))
    u = mat.reshape(k, k, k, k)
    if sig is not None:
        u = u * _parity_mask(sig, sig, sig, sig)
    if pin is not None:
        r = np.diag(pin)
        u = 0.5 * (u + _reflect_pairwise(u, r))
    return polar_orthonormalize(u, 2)


def _extract(env, nrow, prev, mask, refl):
    if mask is not None:
        env = env * mask
    if refl is not None:
        env = env + refl(env)
    with warnings.catch_warnings():
        # Degenerate environments are routine in early sweeps; null
        # directions are tie-broken toward the previous tensor.
        warnings.filterwarnings("ignore", message="degenerate environment")
        t = isometry_from_environment(env, nrow, prev=prev)
    if mask is None and refl is None:
        return t
    if mask is not None:
        t = t * mask
    if refl is not None:
        t = 0.5 * (t + refl(t))
    return polar_orthonormalize(t, nrow)


@dataclass
class BulkMera:
    """Optimized translation-invariant network plus its fixed-point data.

    ``transitional`` holds the bottom layers in ascending order; ``fixed`` is
    reused for every scale above them.  ``rho2`` is the two-site density at
    the crossover level, satisfying descend(rho2) = rho2 to the iteration
    tolerance.  Energies include the spectral shift, i.e. they refer to the
    original coupling.
    """

    hamiltonian: np.ndarray
    shift: float
    transitional: list
    fixed: Layer
    rho2: np.ndarray
    energy_per_site: float
    energy_history: np.ndarray = field(repr=False)
    flip_signatures: list = None
    reflection_parities: list = None

    @property
    def site_dim(self):
        return self.hamiltonian.shape[0]

    @property
    def chi(self):
        return self.fixed.chi_in

    def shifted_coupling(self):
        return self.hamiltonian - self.shift * identity_coupling(self.site_dim)

    def couplings(self):
        """Shifted coupling at each level, bottom up: index s holds h^(s)."""
        out = [self.shifted_coupling()]
        for layer in self.transitional:
            out.append(ascend_coupling(out[-1], layer))
        return out

    def densities(self):
        """Two-site density at each level, bottom up; index -1 is rho2."""
        out = [self.rho2]
        for layer in reversed(self.transitional):
            out.insert(0, descend_density(out[0], layer))
        return out

    def expectation_site(self, op):
        """Ground-state expectation of a one-site operator, site averaged."""
        op = np.asarray(op, float)
        rho = self.densities()[0]
        one = 0.5 * (einsum("abcb->ac", rho) + einsum("abad->bd", rho))
        return ttr(one, op)

    def fixed_point_coupling(self, tol=1e-11, max_iter=500):
        """Limit of repeated ascent through the fixed layer, scaled by 1/3."""
        x = self.couplings()[-1]
        for _ in range(max_iter):
            new = ascend_coupling(x, self.fixed) / 3.0
            diff = np.linalg.norm(new - x)
            x = new
            if diff <= tol * max(1.0, np.linalg.norm(x)):
                return x
        raise ConvergenceError("coupling did not reach its self-similar form")

    def checkpoint_tensors(self):
        out = {"h0": self.hamiltonian}
        for i, layer in enumerate(self.transitional):
            out[f"u_{i + 1}"] = layer.u
            out[f"w_{i + 1}"] = layer.w
        out["u_star"] = self.fixed.u
        out["w_star"] = self.fixed.w
        out["rho2"] = self.rho2
        out["energy_per_site"] = np.float64(self.energy_per_site)
        out["energy_history"] = np.asarray(self.energy_history)
        if self.flip_signatures is not None:
            for i, s in enumerate(self.flip_signatures):
                out[f"sig_{i}"] = s
        if self.reflection_parities is not None:
            for i, p in enumerate(self.reflection_parities):
                out[f"refl_{i}"] = p
        return out

    def save(self, path):
        save_tensors(path, self.checkpoint_tensors())

    @classmethod
    def load(cls, path):
        data = load_tensors(path)
        h0 = data["h0"]
        d = h0.shape[0]
        shift = float(np.linalg.eigvalsh(h0.reshape(d * d, d * d))[-1])
        layers = []
        for i in range(1, len(data) + 1):
            if f"u_{i}" not in data:
                break
            layers.append(Layer(data[f"u_{i}"], data[f"w_{i}"]))
        sigs = [data[f"sig_{i}"] for i in range(len(layers) + 1) if f"sig_{i}" in data]
        refl = [data[f"refl_{i}"] for i in range(len(layers) + 1) if f"refl_{i}" in data]
        return cls(
            hamiltonian=h0,
            shift=shift,
            transitional=layers,
            fixed=Layer(data["u_star"], data["w_star"]),
            rho2=data["rho2"],
            energy_per_site=float(data["energy_per_site"]),
            energy_history=data["energy_history"],
            flip_signatures=sigs or None,
            reflection_parities=refl or None,
        )


def optimize_bulk(
    h,
    chi,
    transitional=2,
    sweeps=2000,
    *,
    flip=None,
    reflection=None,
    seed=0,
    noise=1e-3,
    rho_tol=1e-10,
    fixed_env_scales=3,
    progress=None,
):
    """Optimize a scale-invariant network for a translation-invariant chain.

    Parameters
    ----------
    h : ndarray
        Two-site coupling (d, d, d, d), symmetric as a matrix.
    chi : int
        Bond dimension cap; levels use min(previous^3, chi).
    transitional : int
        Number of individually optimized bottom layers before the fixed one.
    sweeps : int
        Optimization sweeps.  Each sweep updates layers bottom up,
        disentangler before isometry, and refreshes the fixed-point density.
    flip : ndarray, optional
        Diagonal one-site symmetry generator (or its +-1 diagonal); parity
        sectors are then enforced exactly at every level.
    reflection : ReflectionRep, optional
        Spatial reflection rep on the physical level (diagonal).  Tensors are
        kept reflection symmetric through environment symmetrization.
    fixed_env_scales : int
        Number of scales summed into the fixed layer's environment; the
        coupling is renormalized by 1/3 between consecutive terms.
    progress : callable, optional
        Called as progress(sweep, energy) at the start of each sweep.

    Returns
    -------
    BulkMera
    """
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 4 or len(set(h.shape)) != 1:
        raise ShapeError(f"coupling must have shape (d, d, d, d), got {h.shape}")
    d = h.shape[0]
    hmat = h.reshape(d * d, d * d)
    if np.linalg.norm(hmat - hmat.T) > 1e-10 * max(1.0, np.linalg.norm(hmat)):
        raise ConfigError("coupling must be symmetric as a matrix")
    if chi < d:
        raise ConfigError(f"bond dimension {chi} is below the site dimension {d}")
    if transitional < 0 or sweeps < 0 or fixed_env_scales < 1:
        raise ConfigError("layer, sweep and scale counts must be nonnegative")

    sig0 = None if flip is None else _flip_vector(flip, d)
    pin0 = None
    if reflection is not None:
        if reflection.dim != d:
            raise ShapeError("reflection rep does not match the site dimension")
        pin0 = reflection.parities
        if np.linalg.norm(h - reflect_coupling(h, reflection)) > 1e-10 * max(
            1.0, np.linalg.norm(h)
        ):
            raise ConfigError("coupling is not reflection symmetric")
    if sig0 is not None:
        mask0 = _parity_mask(sig0, sig0, sig0, sig0)
        if np.linalg.norm(h * (1.0 - mask0)) > 1e-10 * max(1.0, np.linalg.norm(h)):
            raise ConfigError("coupling mixes flip parity sectors")

    shift = float(np.linalg.eigvalsh(hmat)[-1])
    hs = h - shift * identity_coupling(d)
    rng = np.random.default_rng(seed)

    layers, sigs, pins = [], [sig0], [pin0]
    chi_in = d
    for s in range(transitional + 1):
        is_fixed = s == transitional
        chi_out = chi_in if is_fixed else min(chi_in**3, chi)
        required = (sigs[-1], pins[-1]) if is_fixed else None
        u = _init_disentangler(chi_in, rng, noise, sigs[-1], pins[-1])
        w, sig_out, pin_out = _init_isometry(
            chi_in, chi_out, rng, noise, sigs[-1], pins[-1], required=required
        )
        layers.append(Layer(u, w))
        sigs.append(sig_out)
        pins.append(pin_out)
        chi_in = chi_out

    m = transitional
    # Per-level parity masks and reflection closures for the update steps.
    masks_u = [None if sigs[i] is None else _parity_mask(*(sigs[i],) * 4) for i in range(m + 1)]
    masks_w = [
        None
        if sigs[i] is None
        else _parity_mask(sigs[i], sigs[i], sigs[i], sigs[i + 1])
        for i in range(m + 1)
    ]
    refls_u, refls_w = [], []
    for i in range(m + 1):
        if pins[i] is None:
            refls_u.append(None)
            refls_w.append(None)
        else:
            r_in = np.diag(pins[i])
            r_out = np.diag(pins[i + 1])
            refls_u.append(lambda t, r=r_in: _reflect_pairwise(t, r))
            refls_w.append(lambda t, ri=r_in, ro=r_out: _reflect_isometry(t, ri, ro))

    fixed_sig = sigs[m]
    history = []
    rho_star = None

    def density_chain():
        chain = [None] * (m + 1)
        chain[m] = rho_star
        for j in range(m - 1, -1, -1):
            chain[j] = descend_density(chain[j + 1], layers[j])
        return chain

    for sweep in range(sweeps + 1):
        rho_star = fixed_point_density(
            layers[m], tol=rho_tol, rho0=rho_star, flip_signature=fixed_sig
        )
        chain = density_chain()
        energy = ttr(hs, chain[0]) + shift
        history.append(energy)
        if progress is not None:
            progress(sweep, energy)
        if sweep == sweeps:
            break

        hcur = hs
        for i in range(m):
            layer = layers[i]
            u = _extract(
                disentangler_environment(hcur, chain[i + 1], layer),
                2, layer.u, masks_u[i], refls_u[i],
            )
            layer = Layer(u, layer.w)
            w = _extract(
                isometry_environment(hcur, chain[i + 1], layer),
                3, layer.w, masks_w[i], refls_w[i],
            )
            layers[i] = Layer(u, w)
            hcur = ascend_coupling(hcur, layers[i])

        fx = layers[m]
        env, hk = None, hcur
        for k in range(fixed_env_scales):
            term = disentangler_environment(hk, rho_star, fx)
            env = term if env is None else env + term
            if k + 1 < fixed_env_scales:
                hk = ascend_coupling(hk, fx) / 3.0
        u = _extract(env, 2, fx.u, masks_u[m], refls_u[m])
        fx = Layer(u, fx.w)
        env, hk = None, hcur
        for k in range(fixed_env_scales):
            term = isometry_environment(hk, rho_star, fx)
            env = term if env is None else env + term
            if k + 1 < fixed_env_scales:
                hk = ascend_coupling(hk, fx) / 3.0
        w = _extract(env, 3, fx.w, masks_w[m], refls_w[m])
        layers[m] = Layer(u, w)

    return BulkMera(
        hamiltonian=h,
        shift=shift,
        transitional=layers[:m],
        fixed=layers[m],
        rho2=rho_star,
        energy_per_site=history[-1],
        energy_history=np.asarray(history),
        flip_signatures=None if sig0 is None else sigs[: m + 1],
        reflection_parities=None if pin0 is None else pins[: m + 1],
    )


def split_isometry(w, rho1, chi_mid, iters=100):
    """Factor an isometry across its first leg, cut (x1 | x2 x3).

    Finds wU[x1, e, c] and wL[x2, x3, e] with orthonormal columns maximizing
    the overlap fidelity tTr(rho1 . recomposed^T w), where recomposed is
    wU contracted with wL over e.  Splitting between (x1 x2) and x3 is the
    mirror image: reverse the fine legs of w, split, reverse back.

    Parameters
    ----------
    w : ndarray
        Isometry (a, b, c, m) with orthonormal columns.
    rho1 : ndarray
        One-site density on the coarse index, symmetric with unit trace.
    chi_mid : int
        Dimension of the new internal leg e.
    iters : int
        Alternating maximization steps; stops early once the fidelity stalls.

    Returns
    -------
    (wU, wL, fidelity); the fidelity is 1 - eps for chi_mid = dim(x2) * dim(x3)
    and exactly 1 whenever rho1 is rank one and chi_mid >= 1 suffices to carry
    the single retained state.
    """
    w = np.asarray(w, float)
    if w.ndim != 4:
        raise ShapeError(f"expected a rank-4 isometry, got shape {w.shape}")
    d1, d2, d3, m = w.shape
    rho1 = np.asarray(rho1, float)
    if rho1.shape != (m, m):
        raise ShapeError("density shape does not match the coarse dimension")
    if np.linalg.norm(rho1 - rho1.T) > 1e-8 * max(1.0, np.linalg.norm(rho1)):
        raise ConfigError("density must be symmetric")
    if abs(np.trace(rho1) - 1.0) > 1e-6:
        raise ConfigError("density must have unit trace")
    if not 1 <= chi_mid <= d2 * d3:
        raise ShapeError(f"internal dimension {chi_mid} outside [1, {d2 * d3}]")
    if d1 * chi_mid < m:
        raise ShapeError("internal dimension too small to reach the coarse space")

    # Initial lower factor from the singular vectors of w across the cut.
    mat = w.transpose(1, 2, 0, 3).reshape(d2 * d3, d1 * m)
    ufull, _, _ = np.linalg.svd(mat, full_matrices=True)
    w_low = ufull[:, :chi_mid].reshape(d2, d3, chi_mid)

    fid = -np.inf
    w_up = None
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="degenerate environment")
        for _ in range(max(1, iters)):
            env_up = einsum("bce,abcm,mn->aen", w_low, w, rho1)
            w_up = isometry_from_environment(-env_up, 2, prev=w_up)
            env_low = einsum("aen,abcm,mn->bce", w_up, w, rho1)
            w_low = isometry_from_environment(-env_low, 2, prev=w_low)
            new = float(einsum("aen,bce,abcm,mn->", w_up, w_low, w, rho1))
            if new - fid <= 1e-14 * max(1.0, abs(new)):
                fid = max(fid, new)
                break
            fid = new
    return w_up, w_low, fid
