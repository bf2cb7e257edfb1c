"""Hot inner loops, compiled with numba when available.

Every kernel exists twice: a numba ``@njit`` loop and a vectorised numpy
version. The module-level names dispatch to one of them depending on the
``GRAPHON_SDE_NUMBA`` environment variable (``0`` forces numpy). Both
variants are importable as ``NUMBA_KERNELS`` / ``NUMPY_KERNELS`` so the
benchmark and the tests can compare them directly.

The integer hash kernels are bit-identical across the two paths. Normals go
through ``log``/``cos``, which may differ in the last ulp between LLVM and
numpy's libm, so only closeness is guaranteed there.
"""
from __future__ import annotations

import os

import numpy as np

try:
    import numba
    HAVE_NUMBA = True
    if "NUMBA_THREADING_LAYER" not in os.environ:
        # the bundled TBB is too old and numba warns on every first prange
        numba.config.THREADING_LAYER = "workqueue"
except ImportError:  # pragma: no cover - numba is a hard dependency in CI
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("GRAPHON_SDE_NUMBA", "1") != "0"

# splitmix64 constants
_GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_K_KEY = 0xD6E8FEB86659FD93
_K_CTR = 0xA0761D6478BD642F
_TWO_PI = 2.0 * np.pi
_INV53 = 1.0 / 9007199254740992.0  # 2**-53


# ---------------------------------------------------------------- numpy path

def _mix_np(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def _hash_np(seed, stream, keys, counters):
    keys = np.asarray(keys).astype(np.uint64)
    counters = np.asarray(counters).astype(np.uint64)
    with np.errstate(over="ignore"):
        h = _mix_np(np.uint64(seed) * np.uint64(_GOLDEN) + np.uint64(stream))
        h = _mix_np(h + keys * np.uint64(_K_KEY))
        h = _mix_np(h + counters * np.uint64(_K_CTR))
    return h


def hash_uniform_np(seed, stream, keys, counters):
    """Uniforms in (0, 1] keyed by (seed, stream, key, counter)."""
    h = _hash_np(seed, stream, keys, counters)
    return ((h >> np.uint64(11)).astype(np.float64) + 1.0) * _INV53


def keyed_normal_np(seed, stream, keys, counters):
    """Standard normals by Box-Muller on two keyed uniforms.

    ``counters`` index draws; draw ``c`` consumes hash counters ``2c`` and
    ``2c + 1``.
    """
    counters = np.asarray(counters).astype(np.uint64)
    u1 = hash_uniform_np(seed, stream, keys, counters * np.uint64(2))
    u2 = hash_uniform_np(seed, stream, keys, counters * np.uint64(2) + np.uint64(1))
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(_TWO_PI * u2)


def csr_feature_sums_np(indptr, indices, data, feats):
    """Row sums ``sum_j data[i, j] * feats[j, :]`` of a CSR matrix."""
    n_rows = indptr.shape[0] - 1
    rows = np.repeat(np.arange(n_rows), np.diff(indptr))
    out = np.empty((n_rows, feats.shape[1]))
    for f in range(feats.shape[1]):
        out[:, f] = np.bincount(rows, weights=data * feats[indices, f],
                                minlength=n_rows)
    return out


def euler_step_np(x, drift, diff, dw, dt):
    """In-place ``x += drift*dt + diff @ dw`` for stacked particles."""
    x += drift * dt + np.einsum("pij,pj->pi", diff, dw)
    return x


def sup_gap_np(a, b, order):
    """Per-particle ``max_t |a - b|**order`` for (P, T, n) paths."""
    d = np.sqrt(np.sum((a - b) ** 2, axis=-1))
    return np.max(d, axis=1) ** order


NUMPY_KERNELS = {
    "hash_uniform": hash_uniform_np,
    "keyed_normal": keyed_normal_np,
    "csr_feature_sums": csr_feature_sums_np,
    "euler_step": euler_step_np,
    "sup_gap": sup_gap_np,
}


# ---------------------------------------------------------------- numba path

if HAVE_NUMBA:
    from numba import njit, prange

    @njit(inline="always")
    def _mix_nb(z):
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
        return z ^ (z >> np.uint64(31))

    @njit(inline="always")
    def _hash1_nb(base, key, ctr):
        h = _mix_nb(base + key * np.uint64(_K_KEY))
        return _mix_nb(h + ctr * np.uint64(_K_CTR))

    @njit(inline="always")
    def _to_unit(h):
        return (np.float64(h >> np.uint64(11)) + 1.0) * _INV53

    @njit(cache=True, parallel=True)
    def _hash_uniform_nb(seed, stream, keys, counters):
        base = _mix_nb(seed * np.uint64(_GOLDEN) + stream)
        out = np.empty(keys.shape[0])
        for p in prange(keys.shape[0]):
            out[p] = _to_unit(_hash1_nb(base, keys[p], counters[p]))
        return out

    @njit(cache=True, parallel=True)
    def _keyed_normal_nb(seed, stream, keys, counters):
        base = _mix_nb(seed * np.uint64(_GOLDEN) + stream)
        out = np.empty(keys.shape[0])
        for p in prange(keys.shape[0]):
            c = counters[p] * np.uint64(2)
            u1 = _to_unit(_hash1_nb(base, keys[p], c))
            u2 = _to_unit(_hash1_nb(base, keys[p], c + np.uint64(1)))
            out[p] = np.sqrt(-2.0 * np.log(u1)) * np.cos(_TWO_PI * u2)
        return out

    @njit(cache=True, parallel=True)
    def _csr_feature_sums_nb(indptr, indices, data, feats):
        n_rows = indptr.shape[0] - 1
        n_f = feats.shape[1]
        out = np.zeros((n_rows, n_f))
        for i in prange(n_rows):
            for f in range(n_f):
                acc = 0.0
                for k in range(indptr[i], indptr[i + 1]):
                    acc += data[k] * feats[indices[k], f]
                out[i, f] = acc
        return out

    @njit(cache=True)
    def _euler_step_nb(x, drift, diff, dw, dt):
        P, n = x.shape
        m = dw.shape[1]
        for p in range(P):
            for i in range(n):
                acc = drift[p, i] * dt
                for j in range(m):
                    acc += diff[p, i, j] * dw[p, j]
                x[p, i] += acc
        return x

    @njit(cache=True)
    def _sup_gap_nb(a, b, order):
        P, T, n = a.shape
        out = np.empty(P)
        for p in range(P):
            best = 0.0
            for t in range(T):
                s = 0.0
                for i in range(n):
                    d = a[p, t, i] - b[p, t, i]
                    s += d * d
                s = np.sqrt(s)
                if s > best:
                    best = s
            out[p] = best ** order
        return out

    def _u64(a):
        return np.ascontiguousarray(np.broadcast_to(np.asarray(a), np.shape(a))
                                    .astype(np.uint64).ravel())

    def hash_uniform_nb(seed, stream, keys, counters):
        keys, counters = np.broadcast_arrays(np.asarray(keys), np.asarray(counters))
        shape = keys.shape
        out = _hash_uniform_nb(np.uint64(seed), np.uint64(stream),
                               _u64(keys), _u64(counters))
        return out.reshape(shape)

    def keyed_normal_nb(seed, stream, keys, counters):
        keys, counters = np.broadcast_arrays(np.asarray(keys), np.asarray(counters))
        shape = keys.shape
        out = _keyed_normal_nb(np.uint64(seed), np.uint64(stream),
                               _u64(keys), _u64(counters))
        return out.reshape(shape)

    def csr_feature_sums_nb(indptr, indices, data, feats):
        return _csr_feature_sums_nb(indptr, indices, data,
                                    np.ascontiguousarray(feats, dtype=np.float64))

    def euler_step_nb(x, drift, diff, dw, dt):
        return _euler_step_nb(x, np.ascontiguousarray(drift),
                              np.ascontiguousarray(diff),
                              np.ascontiguousarray(dw), float(dt))

    def sup_gap_nb(a, b, order):
        return _sup_gap_nb(np.ascontiguousarray(a, dtype=np.float64),
                           np.ascontiguousarray(b, dtype=np.float64), float(order))

    NUMBA_KERNELS = {
        "hash_uniform": hash_uniform_nb,
        "keyed_normal": keyed_normal_nb,
        "csr_feature_sums": csr_feature_sums_nb,
        "euler_step": euler_step_nb,
        "sup_gap": sup_gap_nb,
    }
else:  # pragma: no cover
    NUMBA_KERNELS = {}


_ACTIVE = NUMBA_KERNELS if USE_NUMBA else NUMPY_KERNELS

hash_uniform = _ACTIVE["hash_uniform"]
keyed_normal = _ACTIVE["keyed_normal"]
csr_feature_sums = _ACTIVE["csr_feature_sums"]
euler_step = _ACTIVE["euler_step"]
sup_gap = _ACTIVE["sup_gap"]


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"


def set_threads(n: int | None) -> None:
    """Cap the numba worker pool; no-op on the numpy path."""
    if n and USE_NUMBA:
        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))
