"""Hot numeric kernels with two interchangeable backends.

The ``numba`` backend JIT-compiles the inner loops; the ``numpy`` backend is
a vectorized fallback (plain Python for the inherently sequential RNG).
Select a backend with the environment variable ``TOKPOOL_BACKEND`` set to
``numba`` or ``numpy`` before import, or call :func:`set_backend` at runtime.

The random stream is xoshiro256** over four 64-bit words. Integer and
uniform output is bit-identical between backends because the arithmetic is
exact; floating-point reductions (pairwise distances) may differ in the last
ulp because summation order differs.
"""

from __future__ import annotations

import math
import os

import numpy as np

from .errors import UsageError

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

ENV_BACKEND = "TOKPOOL_BACKEND"

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_DOUBLE_SCALE = 2.0 ** -53


def splitmix64(x: int) -> tuple[int, int]:
    """One splitmix64 step: returns (advanced state, mixed output)."""
    x = (x + _GAMMA) & _MASK
    z = (x ^ (x >> 30)) * _MIX1 & _MASK
    z = (z ^ (z >> 27)) * _MIX2 & _MASK
    return x, z ^ (z >> 31)


def seed_state(seed: int) -> np.ndarray:
    """Derive the four xoshiro256** state words from a 64-bit seed."""
    x = int(seed) & _MASK
    state = np.empty(4, dtype=np.uint64)
    for i in range(4):
        x, out = splitmix64(x)
        state[i] = out
    if not state.any():  # all-zero state is the one forbidden xoshiro state
        state[0] = np.uint64(1)
    return state


# ---------------------------------------------------------------------------
# numpy / pure-python backend
# ---------------------------------------------------------------------------


def _step_py(s0, s1, s2, s3):
    r = (s1 * 5) & _MASK
    r = ((r << 7) | (r >> 57)) & _MASK
    r = (r * 9) & _MASK
    t = (s1 << 17) & _MASK
    s2 ^= s0
    s3 ^= s1
    s1 ^= s2
    s0 ^= s3
    s2 ^= t
    s3 = ((s3 << 45) | (s3 >> 19)) & _MASK
    return s0, s1, s2, s3, r


def _fill_u64_py(state, out):
    s0, s1, s2, s3 = (int(v) for v in state)
    for i in range(out.shape[0]):
        s0, s1, s2, s3, r = _step_py(s0, s1, s2, s3)
        out[i] = r
    state[0], state[1], state[2], state[3] = s0, s1, s2, s3


def _fill_uniform_py(state, out):
    s0, s1, s2, s3 = (int(v) for v in state)
    for i in range(out.shape[0]):
        s0, s1, s2, s3, r = _step_py(s0, s1, s2, s3)
        out[i] = (r >> 11) * _DOUBLE_SCALE
    state[0], state[1], state[2], state[3] = s0, s1, s2, s3


def _fill_normal_py(state, out):
    # Marsaglia polar method; a trailing spare value is dropped per fill.
    s0, s1, s2, s3 = (int(v) for v in state)
    n = out.shape[0]
    i = 0
    while i < n:
        s0, s1, s2, s3, ra = _step_py(s0, s1, s2, s3)
        s0, s1, s2, s3, rb = _step_py(s0, s1, s2, s3)
        u = 2.0 * ((ra >> 11) * _DOUBLE_SCALE) - 1.0
        v = 2.0 * ((rb >> 11) * _DOUBLE_SCALE) - 1.0
        s = u * u + v * v
        if s >= 1.0 or s == 0.0:
            continue
        f = math.sqrt(-2.0 * math.log(s) / s)
        out[i] = u * f
        i += 1
        if i < n:
            out[i] = v * f
            i += 1
    state[0], state[1], state[2], state[3] = s0, s1, s2, s3


def _pairwise_sq_dists_np(a, b):
    # Differences are squared directly (no norm-expansion trick) so that
    # identical rows give an exact zero; chunked to bound temp memory.
    n = a.shape[0]
    out = np.empty((n, b.shape[0]), dtype=np.float64)
    chunk = max(1, (1 << 22) // max(1, b.shape[0] * a.shape[1]))
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        diff = a[lo:hi, None, :] - b[None, :, :]
        out[lo:hi] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


def _medoid_update_np(d2, labels, k):
    med = np.full(k, -1, dtype=np.int64)
    for j in range(k):
        idx = np.flatnonzero(labels == j)
        if idx.size == 0:
            continue
        costs = d2[np.ix_(idx, idx)].sum(axis=1)
        med[j] = idx[np.argmin(costs)]
    return med


# ---------------------------------------------------------------------------
# numba backend
# ---------------------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True)
    def _next_u64_nb(state):
        s0 = state[0]
        s1 = state[1]
        s2 = state[2]
        s3 = state[3]
        r = s1 * np.uint64(5)
        r = (r << np.uint64(7)) | (r >> np.uint64(57))
        r = r * np.uint64(9)
        t = s1 << np.uint64(17)
        s2 = s2 ^ s0
        s3 = s3 ^ s1
        s1 = s1 ^ s2
        s0 = s0 ^ s3
        s2 = s2 ^ t
        s3 = (s3 << np.uint64(45)) | (s3 >> np.uint64(19))
        state[0] = s0
        state[1] = s1
        state[2] = s2
        state[3] = s3
        return r

    @njit(cache=True)
    def _fill_u64_nb(state, out):
        for i in range(out.shape[0]):
            out[i] = _next_u64_nb(state)

    @njit(cache=True)
    def _fill_uniform_nb(state, out):
        for i in range(out.shape[0]):
            out[i] = np.float64(_next_u64_nb(state) >> np.uint64(11)) * _DOUBLE_SCALE

    @njit(cache=True)
    def _fill_normal_nb(state, out):
        n = out.shape[0]
        i = 0
        while i < n:
            ra = np.float64(_next_u64_nb(state) >> np.uint64(11)) * _DOUBLE_SCALE
            rb = np.float64(_next_u64_nb(state) >> np.uint64(11)) * _DOUBLE_SCALE
            u = 2.0 * ra - 1.0
            v = 2.0 * rb - 1.0
            s = u * u + v * v
            if s >= 1.0 or s == 0.0:
                continue
            f = math.sqrt(-2.0 * math.log(s) / s)
            out[i] = u * f
            i += 1
            if i < n:
                out[i] = v * f
                i += 1

    @njit(cache=True)
    def _pairwise_sq_dists_nb(a, b):
        n, m = a.shape
        k = b.shape[0]
        out = np.empty((n, k), dtype=np.float64)
        for i in range(n):
            for j in range(k):
                acc = 0.0
                for t in range(m):
                    d = a[i, t] - b[j, t]
                    acc += d * d
                out[i, j] = acc
        return out

    @njit(cache=True)
    def _medoid_update_nb(d2, labels, k):
        n = labels.shape[0]
        med = np.full(k, -1, dtype=np.int64)
        best = np.full(k, np.inf)
        for i in range(n):
            j = labels[i]
            cost = 0.0
            for t in range(n):
                if labels[t] == j:
                    cost += d2[i, t]
            if cost < best[j]:  # strict: first (lowest-index) minimum wins
                best[j] = cost
                med[j] = i
        return med


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------


def _py_fill(fill):
    def run(state, n):
        dtype = np.uint64 if fill is _fill_u64_py else np.float64
        out = np.empty(int(n), dtype=dtype)
        fill(state, out)
        return out

    return run


_BACKENDS = {
    "numpy": {
        "fill_u64": _py_fill(_fill_u64_py),
        "fill_uniform": _py_fill(_fill_uniform_py),
        "fill_normal": _py_fill(_fill_normal_py),
        "pairwise_sq_dists": _pairwise_sq_dists_np,
        "medoid_update": _medoid_update_np,
    }
}

if HAVE_NUMBA:

    def _nb_fill(fill, dtype):
        def run(state, n):
            out = np.empty(int(n), dtype=dtype)
            fill(state, out)
            return out

        return run

    _BACKENDS["numba"] = {
        "fill_u64": _nb_fill(_fill_u64_nb, np.uint64),
        "fill_uniform": _nb_fill(_fill_uniform_nb, np.float64),
        "fill_normal": _nb_fill(_fill_normal_nb, np.float64),
        "pairwise_sq_dists": _pairwise_sq_dists_nb,
        "medoid_update": _medoid_update_nb,
    }


def _initial_backend() -> str:
    choice = os.environ.get(ENV_BACKEND, "").strip().lower()
    if choice:
        if choice not in _BACKENDS:
            raise UsageError(
                f"{ENV_BACKEND}={choice!r} is not available; "
                f"choose one of {sorted(_BACKENDS)}"
            )
        return choice
    return "numba" if HAVE_NUMBA else "numpy"


_active = _initial_backend()


def available_backends() -> tuple[str, ...]:
    return tuple(sorted(_BACKENDS))


def get_backend() -> str:
    return _active


def set_backend(name: str) -> str:
    """Switch kernel backend; returns the previously active one."""
    global _active
    if name not in _BACKENDS:
        raise UsageError(f"unknown backend {name!r}; choose one of {sorted(_BACKENDS)}")
    previous = _active
    _active = name
    return previous


def fill_u64(state: np.ndarray, n: int) -> np.ndarray:
    return _BACKENDS[_active]["fill_u64"](state, n)


def fill_uniform(state: np.ndarray, n: int) -> np.ndarray:
    return _BACKENDS[_active]["fill_uniform"](state, n)


def fill_normal(state: np.ndarray, n: int) -> np.ndarray:
    return _BACKENDS[_active]["fill_normal"](state, n)


def pairwise_sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    return _BACKENDS[_active]["pairwise_sq_dists"](a, b)


def medoid_update(d2: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    d2 = np.ascontiguousarray(d2, dtype=np.float64)
    labels = np.ascontiguousarray(labels, dtype=np.int64)
    return _BACKENDS[_active]["medoid_update"](d2, labels, int(k))
