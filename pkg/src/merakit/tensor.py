"""Dense tensor primitives shared by every network routine in the package.

All tensors are real ``numpy.float64`` arrays.  Conventions used throughout:

* Operators carry output legs first, input legs last: a two-site operator has
  shape ``(a, b, a, b)`` and indices ``(o1, o2, i1, i2)``; reshaping over
  ``(o1 o2 | i1 i2)`` gives the usual matrix.
* Isometries carry their wide (fine) legs first and the narrow (coarse) leg
  last; matricized over ``(fine | coarse)`` they have orthonormal columns,
  ``W^T W = 1``.
* Scalar pairings are elementwise Frobenius sums, ``tTr(A, B) = sum(A * B)``.

Contractions go through :func:`einsum`, which memoizes the contraction path
per (subscripts, shapes) pair; the networks here are small and recur many
thousands of times, so path reuse dominates the planning cost.
"""

import warnings

import numpy as np
import scipy.linalg

from .errors import ShapeError

# Relative singular-value cutoff below which directions count as degenerate.
SV_CUTOFF = 1e-12

_PATH_CACHE = {}

# np.einsum_path caps intermediates at the largest operand size by default,
# which cripples multi-tensor networks of small tensors.  Allow intermediates
# up to 2^24 elements (128 MB as float64) so the true optimal order is found.
_PATH_MEMORY_LIMIT = 2**24


def einsum(subscripts, *arrays):
    """np.einsum with a cached contraction path keyed on subscripts+shapes."""
    key = (subscripts, tuple(a.shape for a in arrays))
    path = _PATH_CACHE.get(key)
    if path is None:
        path = np.einsum_path(
            subscripts, *arrays, optimize=("optimal", _PATH_MEMORY_LIMIT)
        )[0]
        _PATH_CACHE[key] = path
    return np.einsum(subscripts, *arrays, optimize=path)


def contract(a, b, axes_a, axes_b):
    """Contract tensor ``a`` with ``b`` over the given axis pairs.

    Parameters
    ----------
    a, b : ndarray
    axes_a, axes_b : sequence of int
        Axes of ``a`` and ``b`` to pair up, in order.  Paired axes must have
        equal dimensions; unlike raw numpy this never broadcasts.

    Returns
    -------
    ndarray with the free axes of ``a`` (in order) followed by those of ``b``.
    """
    axes_a = tuple(int(x) for x in axes_a)
    axes_b = tuple(int(x) for x in axes_b)
    if len(axes_a) != len(axes_b):
        raise ShapeError(
            f"axis lists differ in length: {len(axes_a)} vs {len(axes_b)}"
        )
    for xa, xb in zip(axes_a, axes_b):
        if a.shape[xa] != b.shape[xb]:
            raise ShapeError(
                f"cannot contract axis {xa} (dim {a.shape[xa]}) of shape "
                f"{a.shape} with axis {xb} (dim {b.shape[xb]}) of shape {b.shape}"
            )
    return np.tensordot(a, b, axes=(axes_a, axes_b))


def ttr(a, b):
    """Elementwise Frobenius pairing sum(a * b); shapes must match exactly."""
    if a.shape != b.shape:
        raise ShapeError(f"pairing shapes differ: {a.shape} vs {b.shape}")
    return float(np.sum(a * b))


def _matricize(t, nrow_axes):
    rows = int(np.prod(t.shape[:nrow_axes], dtype=np.int64))
    cols = int(np.prod(t.shape[nrow_axes:], dtype=np.int64))
    return np.ascontiguousarray(t).reshape(rows, cols)


def svd(t, nrow_axes):
    """SVD of t matricized with the first ``nrow_axes`` axes as rows.

    Returns (U, s, Vt) with U of shape rows x k, s descending, Vt of shape
    k x cols, k = min(rows, cols). Thin factors; reshape is left to the caller.
    """
    mat = _matricize(np.asarray(t, dtype=np.float64), nrow_axes)
    return np.linalg.svd(mat, full_matrices=False)


def eig_sym(mat, asym_tol=1e-10):
    """Eigendecomposition of a symmetric matrix, sorted descending by |eig|.

    Raises ValueError if the input is not symmetric to ``asym_tol`` (relative);
    asymmetry here is always a bug upstream, so fail loudly instead of
    symmetrizing silently.
    """
    mat = np.asarray(mat, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ShapeError(f"eig_sym needs a square matrix, got {mat.shape}")
    scale = np.linalg.norm(mat)
    if scale > 0 and np.linalg.norm(mat - mat.T) > asym_tol * scale:
        raise ValueError("eig_sym: input matrix is not symmetric")
    vals, vecs = np.linalg.eigh(mat)
    order = np.argsort(-np.abs(vals), kind="stable")
    return vals[order], vecs[:, order]


def eig_general(mat, residual_tol=1e-8):
    """Eigendecomposition of a general real matrix, sorted descending by |eig|.

    Returns complex (vals, vecs).  Each returned pair is checked against
    ``|A v - lambda v| <= residual_tol * |A|``; a failure raises, since the
    spectra downstream feed scaling-dimension estimates directly.
    """
    mat = np.asarray(mat, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ShapeError(f"eig_general needs a square matrix, got {mat.shape}")
    vals, vecs = scipy.linalg.eig(mat)
    order = np.argsort(-np.abs(vals), kind="stable")
    vals, vecs = vals[order], vecs[:, order]
    scale = np.linalg.norm(mat)
    res = np.linalg.norm(mat @ vecs - vecs * vals[None, :], axis=0)
    if scale > 0 and np.any(res > residual_tol * scale):
        raise ValueError(
            f"eig_general: residual {res.max():.3e} exceeds {residual_tol:.1e} * |A|"
        )
    return vals, vecs


def isometry_from_environment(env, nrow_axes, prev=None):
    """Isometry minimizing the pairing tTr(env, T) subject to T^T T = 1.

    Parameters
    ----------
    env : ndarray
        Linearized environment, same index structure as the tensor sought.
    nrow_axes : int
        Number of leading axes forming the wide (input) group.  The trailing
        axes form the narrow (output) group and their total dim must not
        exceed the input dim.
    prev : ndarray, optional
        Previous value of the tensor.  Directions left undetermined by a
        (near-)degenerate environment are tie-broken toward it by an
        infinitesimal bias; a warning is emitted when that happens.

    Returns
    -------
    ndarray, shaped like ``env``, matricizing to -V U^T of the environment's
    SVD, which attains pairing value -sum(singular values).
    """
    shape = env.shape
    mat = _matricize(env, nrow_axes)
    if mat.shape[0] < mat.shape[1]:
        raise ShapeError(
            f"environment rows {mat.shape[0]} < cols {mat.shape[1]}; "
            "an isometry this direction cannot exist"
        )
    scale = np.linalg.norm(mat)
    s0 = np.linalg.svd(mat, compute_uv=False)
    if s0[0] > 0 and s0[-1] < SV_CUTOFF * s0[0]:
        warnings.warn(
            "degenerate environment in isometry update; "
            "null directions tie-broken toward previous tensor",
            stacklevel=2,
        )
    if prev is not None:
        mat = mat - (1e-10 * scale) * _matricize(prev, nrow_axes)
    u, s, vt = np.linalg.svd(mat, full_matrices=False)
    return (-(u @ vt)).reshape(shape)


def polar_orthonormalize(t, nrow_axes):
    """Nearest isometry (orthonormal columns) to ``t`` over the leading axes."""
    mat = _matricize(t, nrow_axes)
    if mat.shape[0] < mat.shape[1]:
        raise ShapeError("cannot orthonormalize: more columns than rows")
    u, _, vt = np.linalg.svd(mat, full_matrices=False)
    return (u @ vt).reshape(t.shape)


def near_identity_isometry(in_dims, out_dim, rng, noise=1e-3):
    """Truncated-identity isometry with a little noise, re-orthonormalized.

    ``in_dims`` are the wide legs; the result has shape (*in_dims, out_dim).
    The deterministic part keeps the first ``out_dim`` columns of the identity
    on the fused input space.
    """
    in_dim = int(np.prod(in_dims, dtype=np.int64))
    if out_dim > in_dim:
        raise ShapeError(f"out dim {out_dim} exceeds input dim {in_dim}")
    mat = np.eye(in_dim, out_dim)
    mat = mat + noise * rng.standard_normal(mat.shape)
    u, _, vt = np.linalg.svd(mat, full_matrices=False)
    return (u @ vt).reshape(*in_dims, out_dim)


def random_isometry(in_dims, out_dim, rng):
    """Haar-ish random isometry (*in_dims, out_dim) via QR of a Gaussian."""
    in_dim = int(np.prod(in_dims, dtype=np.int64))
    if out_dim > in_dim:
        raise ShapeError(f"out dim {out_dim} exceeds input dim {in_dim}")
    q, r = np.linalg.qr(rng.standard_normal((in_dim, out_dim)))
    q = q * np.sign(np.diag(r))[None, :]
    return q.reshape(*in_dims, out_dim)


def assert_isometric(t, nrow_axes, tol=1e-10):
    """Raise if t is not an isometry over its leading ``nrow_axes`` legs."""
    mat = _matricize(t, nrow_axes)
    gram = mat.T @ mat
    dev = np.linalg.norm(gram - np.eye(mat.shape[1]))
    if dev > tol * max(1.0, np.sqrt(mat.shape[1])):
        raise ValueError(f"tensor is not isometric: |W^T W - 1| = {dev:.3e}")
