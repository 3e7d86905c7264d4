"""Hot loops: one synchronous BP sweep and single-source max-product search.

Each kernel has a numba ``@njit`` version and a plain numpy / Python version.
The numba path is used when numba imports and ``DNSASSOC_DISABLE_NUMBA`` is
unset (or ``0``).  Both paths compute the same thing and are tested against
each other.
"""
import heapq
import os

import numpy as np

_FLAG = os.environ.get("DNSASSOC_DISABLE_NUMBA", "0").strip().lower()

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(func):
            return func

        return wrap


USE_NUMBA = HAVE_NUMBA and _FLAG in ("", "0", "false", "no")


def backend():
    return "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# belief propagation
#
# Directed edge e carries a message src[e] -> dst[e]; rev[e] is the id of the
# opposite direction.  psi[e, p, r] is the potential with the sender in state p
# and the receiver in state r.  Messages are normalized probability vectors.
# ---------------------------------------------------------------------------


def _bp_sweep_numpy(src, dst, rev, log_prior, psi, msg):
    n = log_prior.shape[0]
    logm = np.log(msg)
    acc = log_prior.copy()
    acc[:, 0] += np.bincount(dst, weights=logm[:, 0], minlength=n)
    acc[:, 1] += np.bincount(dst, weights=logm[:, 1], minlength=n)
    excl = acc[src] - logm[rev]
    excl -= excl.max(axis=1, keepdims=True)
    a = np.exp(excl)
    out = np.einsum("ep,epr->er", a, psi)
    out /= out.sum(axis=1, keepdims=True)
    if out.shape[0] == 0:
        return out, 0.0
    return out, float(np.abs(out - msg).max())


@njit(cache=True, nogil=True)
def _bp_sweep_numba(src, dst, rev, log_prior, psi, msg):
    n = log_prior.shape[0]
    ne = src.shape[0]
    logm = np.log(msg)
    acc = log_prior.copy()
    for e in range(ne):
        acc[dst[e], 0] += logm[e, 0]
        acc[dst[e], 1] += logm[e, 1]
    out = np.empty_like(msg)
    delta = 0.0
    for e in range(ne):
        i = src[e]
        r = rev[e]
        x0 = acc[i, 0] - logm[r, 0]
        x1 = acc[i, 1] - logm[r, 1]
        top = max(x0, x1)
        a0 = np.exp(x0 - top)
        a1 = np.exp(x1 - top)
        o0 = a0 * psi[e, 0, 0] + a1 * psi[e, 1, 0]
        o1 = a0 * psi[e, 0, 1] + a1 * psi[e, 1, 1]
        z = o0 + o1
        o0 /= z
        o1 /= z
        out[e, 0] = o0
        out[e, 1] = o1
        d = max(abs(o0 - msg[e, 0]), abs(o1 - msg[e, 1]))
        if d > delta:
            delta = d
    return out, delta


def _beliefs_numpy(dst, log_prior, msg):
    n = log_prior.shape[0]
    logm = np.log(msg)
    acc = log_prior.copy()
    acc[:, 0] += np.bincount(dst, weights=logm[:, 0], minlength=n)
    acc[:, 1] += np.bincount(dst, weights=logm[:, 1], minlength=n)
    acc -= acc.max(axis=1, keepdims=True)
    b = np.exp(acc)
    return b / b.sum(axis=1, keepdims=True)


@njit(cache=True, nogil=True)
def _beliefs_numba(dst, log_prior, msg):
    n = log_prior.shape[0]
    acc = log_prior.copy()
    for e in range(dst.shape[0]):
        acc[dst[e], 0] += np.log(msg[e, 0])
        acc[dst[e], 1] += np.log(msg[e, 1])
    out = np.empty((n, 2))
    for i in range(n):
        top = max(acc[i, 0], acc[i, 1])
        b0 = np.exp(acc[i, 0] - top)
        b1 = np.exp(acc[i, 1] - top)
        out[i, 0] = b0 / (b0 + b1)
        out[i, 1] = b1 / (b0 + b1)
    return out


# ---------------------------------------------------------------------------
# max-product single-source search over a CSR adjacency with weights in (0, 1]
# ---------------------------------------------------------------------------


def _maxprod_sssp_python(indptr, indices, weights, source, floor):
    n = indptr.shape[0] - 1
    best = np.zeros(n)
    done = np.zeros(n, dtype=np.bool_)
    best[source] = 1.0
    heap = [(-1.0, int(source))]
    while heap:
        negv, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        val = -negv
        for k in range(indptr[u], indptr[u + 1]):
            v = indices[k]
            if done[v]:
                continue
            cand = val * weights[k]
            if cand >= floor and cand > best[v]:
                best[v] = cand
                heapq.heappush(heap, (-cand, int(v)))
    return best


@njit(cache=True, nogil=True)
def _maxprod_sssp_numba(indptr, indices, weights, source, floor):
    n = indptr.shape[0] - 1
    best = np.zeros(n)
    done = np.zeros(n, dtype=np.bool_)
    best[source] = 1.0
    heap = [(-1.0, np.int64(source))]
    while len(heap) > 0:
        negv, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        val = -negv
        for k in range(indptr[u], indptr[u + 1]):
            v = indices[k]
            if done[v]:
                continue
            cand = val * weights[k]
            if cand >= floor and cand > best[v]:
                best[v] = cand
                heapq.heappush(heap, (-cand, np.int64(v)))
    return best


if USE_NUMBA:
    bp_sweep = _bp_sweep_numba
    bp_beliefs = _beliefs_numba
    maxprod_sssp = _maxprod_sssp_numba
else:
    bp_sweep = _bp_sweep_numpy
    bp_beliefs = _beliefs_numpy
    maxprod_sssp = _maxprod_sssp_python
