# cython: boundscheck=False, wraparound=False, cdivision=True
# cython: language_level=3
"""Compiled episode kernel, bitwise-equivalent to the pure-Python twin.

Logits accumulate column-by-column per action, softmax goes through libm
exp, and every categorical draw walks a running-sum cdf — the exact float
operation sequence of the Python implementation in rollout.py, so both
backends produce identical trajectories. The episode loop runs without the
GIL; callers pass disjoint [i0, i1) ranges into shared output arrays.
"""

from libc.math cimport exp
from libc.stdlib cimport free, malloc

import numpy as np

cimport numpy as cnp

cnp.import_array()

ctypedef cnp.int64_t i64
ctypedef unsigned char u8

# sentinel values mirrored from game.py (asserted at import below)
cdef int NO_OBS = -1
cdef int NO_IMITATOR = -1


cdef inline int pick_sparse(
    const double[:, ::1] W, const i64* cols, int ncols,
    double* logit, double* ex, int A, double u,
) noexcept nogil:
    """Sample from softmax of summed weight columns (running-sum walk)."""
    cdef int a, k
    cdef double v, m, Z, acc
    for a in range(A):
        v = 0.0
        for k in range(ncols):
            v += W[a, cols[k]]
        logit[a] = v
    m = logit[0]
    for a in range(1, A):
        if logit[a] > m:
            m = logit[a]
    Z = 0.0
    for a in range(A):
        ex[a] = exp(logit[a] - m)
        Z += ex[a]
    acc = 0.0
    for a in range(A):
        acc += ex[a] / Z
        if u < acc:
            return a
    return A - 1


cdef inline int pick_row(
    const double[:, :, :, ::1] P, int s, int aa, int av, int S, double u,
) noexcept nogil:
    cdef int j
    cdef double acc = 0.0
    for j in range(S):
        acc += P[s, aa, av, j]
        if u < acc:
            return j
    return S - 1


cdef inline int pick_cdf(const double[::1] cdf, int n, double u) noexcept nogil:
    cdef int k
    for k in range(n):
        if u < cdf[k]:
            return k
    return n - 1


def run_episodes(
    const double[:, :, :, ::1] P,
    const u8[::1] absorbing,
    const i64[:, ::1] obs_index,
    const i64[::1] block_offsets,
    int start_state,
    int horizon,
    const double[:, ::1] vic_W,
    bint has_imit,
    const double[:, ::1] imit_W,
    const double[:, :, ::1] adv_Ws,
    const double[::1] comp_cdf,
    bint per_step_mix,
    int pred_offset,
    const u8[::1] adv_mask,
    const double[:, :, ::1] U,
    int i0,
    int i1,
    i64[:, ::1] states,
    i64[:, ::1] adv_a,
    i64[:, ::1] vic_a,
    i64[:, ::1] imit_a,
    i64[::1] lengths,
    u8[::1] absorbed,
):
    cdef int n_blocks = <int> obs_index.shape[1]
    cdef int n_comp = <int> adv_Ws.shape[0]
    cdef int A_adv = <int> adv_Ws.shape[1]
    cdef int A_vic = <int> vic_W.shape[0]
    cdef int A_imit = <int> imit_W.shape[0]
    cdef int S = <int> P.shape[3]

    cdef int max_a = A_adv
    if A_vic > max_a:
        max_a = A_vic
    if A_imit > max_a:
        max_a = A_imit
    cdef int max_cols = n_blocks + 1

    cdef i64* env_cols = <i64*> malloc(max_cols * sizeof(i64))
    cdef i64* adv_cols = <i64*> malloc(max_cols * sizeof(i64))
    cdef double* logit = <double*> malloc(max_a * sizeof(double))
    cdef double* ex = <double*> malloc(max_a * sizeof(double))
    if env_cols == NULL or adv_cols == NULL or logit == NULL or ex == NULL:
        free(env_cols)
        free(adv_cols)
        free(logit)
        free(ex)
        raise MemoryError()

    cdef int i, t, s, b, comp, pred, aa, av, n_env, n_adv
    cdef bint done
    cdef i64 c
    try:
        with nogil:
            for i in range(i0, i1):
                comp = 0
                if n_comp > 1 and not per_step_mix:
                    comp = pick_cdf(comp_cdf, n_comp, U[i, 0, 0])
                s = start_state
                states[i, 0] = s
                t = 0
                done = False
                while t < horizon and not done:
                    n_env = 0
                    for b in range(n_blocks):
                        if obs_index[s, b] != NO_OBS:
                            env_cols[n_env] = block_offsets[b] + obs_index[s, b]
                            n_env += 1
                    # imitator prediction first, then the adversary acts
                    pred = NO_IMITATOR
                    if has_imit:
                        pred = pick_sparse(
                            imit_W, env_cols, n_env, logit, ex, A_imit, U[i, t, 1]
                        )
                    if n_comp > 1 and per_step_mix:
                        comp = pick_cdf(comp_cdf, n_comp, U[i, t, 0])
                    n_adv = 0
                    for b in range(n_env):
                        c = env_cols[b]
                        if adv_mask[c] == 0:
                            adv_cols[n_adv] = c
                            n_adv += 1
                    if (
                        pred_offset >= 0
                        and pred != NO_IMITATOR
                        and adv_mask[pred_offset + pred] == 0
                    ):
                        adv_cols[n_adv] = pred_offset + pred
                        n_adv += 1
                    aa = pick_sparse(
                        adv_Ws[comp], adv_cols, n_adv, logit, ex, A_adv, U[i, t, 2]
                    )
                    av = pick_sparse(
                        vic_W, env_cols, n_env, logit, ex, A_vic, U[i, t, 3]
                    )
                    s = pick_row(P, s, aa, av, S, U[i, t, 4])
                    adv_a[i, t] = aa
                    vic_a[i, t] = av
                    imit_a[i, t] = pred
                    states[i, t + 1] = s
                    done = absorbing[s] != 0
                    t += 1
                lengths[i] = t
                absorbed[i] = done
    finally:
        free(env_cols)
        free(adv_cols)
        free(logit)
        free(ex)


def _check_sentinels():
    from .game import NO_IMITATOR as py_imit, NO_OBS as py_obs

    if py_obs != NO_OBS or py_imit != NO_IMITATOR:  # pragma: no cover
        raise ImportError("sentinel constants drifted between modules")


_check_sentinels()
