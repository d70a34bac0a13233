"""Pure-numpy implementation of the hot loops; mirrors ``_kernels.pyx`` argument for argument.

Arrays are padded to a common feature width ``D``: a stage whose true
dimension is ``d < D`` carries zero features in the padding and ``lambda`` on
the padded diagonal of its design matrix, so the padding never touches a
prediction or a bonus.
"""
import numpy as np

NOISE_BERNOULLI = 0
NOISE_GAUSSIAN = 1
NOISE_DETERMINISTIC = 2


def plan(phi, design, reward_sum, trans_count, beta, cap, floor, qbar, policy):
    """Optimistic backward pass; fills ``qbar[H, S, A]`` and ``policy[H, S]`` in place.

    phi: (N, H, S, A, D); design: (N, H, D, D); beta: (H, N).
    """
    N, H, S, A, D = phi.shape
    v_next = np.zeros(S)
    for h in range(H - 1, -1, -1):
        target = reward_sum[h] + trans_count[h] @ v_next
        X = phi[:, h].reshape(N, S * A, D)
        b = np.einsum("nkd,k->nd", X, target.ravel())
        Lam = design[:, h]
        w = np.linalg.solve(Lam, b[..., None])[..., 0]
        chol = np.linalg.cholesky(Lam)
        Z = np.linalg.solve(chol, X.transpose(0, 2, 1))
        width = np.sqrt(np.einsum("ndk,ndk->nk", Z, Z))
        q = np.einsum("nkd,nd->nk", X, w) + beta[h][:, None] * width
        best = np.minimum(cap, q.min(axis=0))
        if floor:
            best = np.maximum(best, 0.0)
        qbar[h] = best.reshape(S, A)
        policy[h] = np.argmax(qbar[h], axis=1)
        v_next = qbar[h].max(axis=1)


def _draw(cdf, u):
    i = int(np.searchsorted(cdf, u, side="right"))
    return min(i, cdf.shape[0] - 1)


def run_chunk(phi, design, reward_sum, visit_count, trans_count, betas, cap, floor,
              mean_reward, transition, trans_cdf, init_cdf, vstar1, noise_kind, sigma,
              u_state, u_reward, out_s1, out_regret, out_vbar1, out_policy, qbar):
    """Run ``len(betas)`` episodes: plan, score exactly, simulate, accumulate."""
    N, H, S, A, D = phi.shape
    policy = np.zeros((H, S), dtype=np.int64)
    states = np.arange(S)
    for i in range(betas.shape[0]):
        plan(phi, design, reward_sum, trans_count, betas[i], cap, floor, qbar, policy)
        out_policy[i] = policy

        s = _draw(init_cdf, u_state[i, 0])
        out_s1[i] = s
        out_vbar1[i] = qbar[0, s].max()

        v = np.zeros(S)
        for h in range(H - 1, -1, -1):
            acts = policy[h]
            v = mean_reward[h, states, acts] + transition[h, states, acts] @ v
        out_regret[i] = vstar1[s] - v[s]

        for h in range(H):
            a = policy[h, s]
            mean = mean_reward[h, s, a]
            if noise_kind == NOISE_BERNOULLI:
                r = 1.0 if u_reward[i, h] < mean else 0.0
            elif noise_kind == NOISE_GAUSSIAN:
                r = mean + sigma * u_reward[i, h]
            else:
                r = mean
            s_next = _draw(trans_cdf[h, s, a], u_state[i, 1 + h])
            visit_count[h, s, a] += 1
            reward_sum[h, s, a] += r
            trans_count[h, s, a, s_next] += 1
            f = phi[:, h, s, a]
            design[:, h] += f[:, :, None] * f[:, None, :]
            s = s_next
