# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops. Same signatures and semantics as ``_kernels_py``."""
from libc.math cimport sqrt, fmin, fmax
from libc.stdlib cimport malloc, free

cdef enum:
    NOISE_BERNOULLI = 0
    NOISE_GAUSSIAN = 1


cdef int _cholesky(const double* M, double* L, int D) noexcept nogil:
    cdef int i, j, k
    cdef double acc
    for i in range(D * D):
        L[i] = 0.0
    for j in range(D):
        acc = M[j * D + j]
        for k in range(j):
            acc -= L[j * D + k] * L[j * D + k]
        if acc <= 0.0:
            return -1
        L[j * D + j] = sqrt(acc)
        for i in range(j + 1, D):
            acc = M[i * D + j]
            for k in range(j):
                acc -= L[i * D + k] * L[j * D + k]
            L[i * D + j] = acc / L[j * D + j]
    return 0


cdef void _forward(const double* L, const double* b, double* z, int D) noexcept nogil:
    cdef int i, k
    cdef double acc
    for i in range(D):
        acc = b[i]
        for k in range(i):
            acc -= L[i * D + k] * z[k]
        z[i] = acc / L[i * D + i]


cdef void _backward(const double* L, const double* z, double* w, int D) noexcept nogil:
    cdef int i, k
    cdef double acc
    for i in range(D - 1, -1, -1):
        acc = z[i]
        for k in range(i + 1, D):
            acc -= L[k * D + i] * w[k]
        w[i] = acc / L[i * D + i]


cdef int _plan(const double[:, :, :, :, ::1] phi, const double[:, :, :, ::1] design,
               const double[:, :, ::1] reward_sum, const long[:, :, :, ::1] trans_count,
               const double[:, ::1] beta, double cap, bint floor,
               double[:, :, ::1] qbar, long[:, ::1] policy, double* work) noexcept nogil:
    cdef int N = phi.shape[0], H = phi.shape[1], S = phi.shape[2], A = phi.shape[3]
    cdef int D = phi.shape[4]
    cdef double* L = work
    cdef double* b = work + D * D
    cdef double* z = b + D
    cdef double* w = z + D
    cdef double* y = w + D
    cdef double* v_next = y + D
    cdef double* target = v_next + S
    cdef int h, j, s, a, sp, d, best_a
    cdef double acc, q, width, best
    for s in range(S):
        v_next[s] = 0.0
    for h in range(H - 1, -1, -1):
        for s in range(S):
            for a in range(A):
                acc = reward_sum[h, s, a]
                for sp in range(S):
                    acc += trans_count[h, s, a, sp] * v_next[sp]
                target[s * A + a] = acc
                qbar[h, s, a] = cap
        for j in range(N):
            if _cholesky(&design[j, h, 0, 0], L, D) != 0:
                return -1
            for d in range(D):
                acc = 0.0
                for s in range(S):
                    for a in range(A):
                        acc += phi[j, h, s, a, d] * target[s * A + a]
                b[d] = acc
            _forward(L, b, z, D)
            _backward(L, z, w, D)
            for s in range(S):
                for a in range(A):
                    _forward(L, &phi[j, h, s, a, 0], y, D)
                    width = 0.0
                    q = 0.0
                    for d in range(D):
                        width += y[d] * y[d]
                        q += phi[j, h, s, a, d] * w[d]
                    q += beta[h, j] * sqrt(width)
                    qbar[h, s, a] = fmin(qbar[h, s, a], q)
        for s in range(S):
            best_a = 0
            if floor:
                qbar[h, s, 0] = fmax(qbar[h, s, 0], 0.0)
            best = qbar[h, s, 0]
            for a in range(1, A):
                if floor:
                    qbar[h, s, a] = fmax(qbar[h, s, a], 0.0)
                if qbar[h, s, a] > best:
                    best = qbar[h, s, a]
                    best_a = a
            policy[h, s] = best_a
            v_next[s] = best
    return 0


cdef inline int _workspace_size(int D, int S, int A) noexcept nogil:
    return D * D + 4 * D + S + S * A


def plan(phi, design, reward_sum, trans_count, beta, double cap, bint floor, qbar, policy):
    cdef const double[:, :, :, :, ::1] phi_v = phi
    cdef const double[:, :, :, ::1] design_v = design
    cdef const double[:, :, ::1] rs_v = reward_sum
    cdef const long[:, :, :, ::1] tc_v = trans_count
    cdef const double[:, ::1] beta_v = beta
    cdef double[:, :, ::1] q_v = qbar
    cdef long[:, ::1] pol_v = policy
    cdef int D = phi.shape[4], S = phi.shape[2], A = phi.shape[3]
    cdef double* work = <double*> malloc(_workspace_size(D, S, A) * sizeof(double))
    cdef int status
    if work == NULL:
        raise MemoryError()
    with nogil:
        status = _plan(phi_v, design_v, rs_v, tc_v, beta_v, cap, floor, q_v, pol_v, work)
    free(work)
    if status != 0:
        raise ValueError("design matrix is not positive definite")


cdef inline int _draw(const double[::1] cdf, double u) noexcept nogil:
    cdef int i
    cdef int n = cdf.shape[0]
    for i in range(n):
        if u < cdf[i]:
            return i
    return n - 1


def run_chunk(phi, design, reward_sum, visit_count, trans_count, betas, double cap, bint floor,
              mean_reward, transition, trans_cdf, init_cdf, vstar1, int noise_kind, double sigma,
              u_state, u_reward, out_s1, out_regret, out_vbar1, out_policy, qbar):
    cdef const double[:, :, :, :, ::1] phi_v = phi
    cdef double[:, :, :, ::1] design_v = design
    cdef double[:, :, ::1] rs_v = reward_sum
    cdef long[:, :, ::1] vc_v = visit_count
    cdef long[:, :, :, ::1] tc_v = trans_count
    cdef const double[:, :, ::1] betas_v = betas
    cdef const double[:, :, ::1] r_v = mean_reward
    cdef const double[:, :, :, ::1] p_v = transition
    cdef const double[:, :, :, ::1] cdf_v = trans_cdf
    cdef const double[::1] init_v = init_cdf
    cdef const double[::1] vstar_v = vstar1
    cdef const double[:, ::1] us_v = u_state
    cdef const double[:, ::1] ur_v = u_reward
    cdef long[::1] s1_v = out_s1
    cdef double[::1] reg_v = out_regret
    cdef double[::1] vbar_v = out_vbar1
    cdef long[:, :, ::1] pol_out = out_policy
    cdef double[:, :, ::1] q_v = qbar

    cdef int N = phi.shape[0], H = phi.shape[1], S = phi.shape[2], A = phi.shape[3]
    cdef int D = phi.shape[4]
    cdef int n = betas.shape[0]
    cdef int i, h, s, a, sp, j, d1, d2, s_next, status = 0
    cdef double r, mean, best, acc
    cdef double* work = <double*> malloc((_workspace_size(D, S, A) + 2 * S) * sizeof(double))
    cdef long* pol = <long*> malloc(H * S * sizeof(long))
    if work == NULL or pol == NULL:
        free(work)
        free(pol)
        raise MemoryError()
    cdef double* v = work + _workspace_size(D, S, A)
    cdef double* v_tmp = v + S
    cdef long[:, ::1] pol_v = <long[:H, :S]> pol

    with nogil:
        for i in range(n):
            status = _plan(phi_v, design_v, rs_v, tc_v, betas_v[i], cap, floor, q_v, pol_v, work)
            if status != 0:
                break
            for h in range(H):
                for s in range(S):
                    pol_out[i, h, s] = pol_v[h, s]

            s = _draw(init_v, us_v[i, 0])
            s1_v[i] = s
            best = q_v[0, s, 0]
            for a in range(1, A):
                if q_v[0, s, a] > best:
                    best = q_v[0, s, a]
            vbar_v[i] = best

            for sp in range(S):
                v[sp] = 0.0
            for h in range(H - 1, -1, -1):
                for sp in range(S):
                    a = pol_v[h, sp]
                    acc = 0.0
                    for s_next in range(S):
                        acc += p_v[h, sp, a, s_next] * v[s_next]
                    v_tmp[sp] = r_v[h, sp, a] + acc
                for sp in range(S):
                    v[sp] = v_tmp[sp]
            reg_v[i] = vstar_v[s] - v[s]

            for h in range(H):
                a = pol_v[h, s]
                mean = r_v[h, s, a]
                if noise_kind == NOISE_BERNOULLI:
                    r = 1.0 if ur_v[i, h] < mean else 0.0
                elif noise_kind == NOISE_GAUSSIAN:
                    r = mean + sigma * ur_v[i, h]
                else:
                    r = mean
                s_next = _draw(cdf_v[h, s, a], us_v[i, 1 + h])
                vc_v[h, s, a] += 1
                rs_v[h, s, a] += r
                tc_v[h, s, a, s_next] += 1
                for j in range(N):
                    for d1 in range(D):
                        for d2 in range(D):
                            design_v[j, h, d1, d2] += phi_v[j, h, s, a, d1] * phi_v[j, h, s, a, d2]
                s = s_next
    free(work)
    free(pol)
    if status != 0:
        raise ValueError("design matrix is not positive definite")
