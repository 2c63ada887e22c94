"""Pure-NumPy kernels: the fallback backend.

Same contracts as the compiled ``_fast`` module.  All arrays are float64,
C-contiguous; gradient arguments are accumulated into (``+=``), never
overwritten, so one set of buffers can absorb a whole mini-batch.
"""

import numpy as np

from ..compute import sigmoid

NAME = "numpy"


def gru_forward(W_r, W_u, W_c, b_r, b_u, b_c, E, h0):
    """Run a GRU over embedded inputs ``E`` (T, d_e) from state ``h0``.

    Gate order per step: reset and update from [e_t, h_{t-1}], candidate
    from [e_t, r_t * h_{t-1}], then h_t = u_t * h_{t-1} + (1 - u_t) * c_t.
    Returns (H, R, U, C), each (T, d_h); callers keep them for backward.
    """
    T, d_e = E.shape
    d_h = h0.shape[0]
    H = np.empty((T, d_h))
    R = np.empty((T, d_h))
    U = np.empty((T, d_h))
    C = np.empty((T, d_h))
    h_prev = h0
    for t in range(T):
        z = np.concatenate((E[t], h_prev))
        r = sigmoid(W_r @ z + b_r)
        u = sigmoid(W_u @ z + b_u)
        zc = np.concatenate((E[t], r * h_prev))
        c = np.tanh(W_c @ zc + b_c)
        h = u * h_prev + (1.0 - u) * c
        R[t], U[t], C[t], H[t] = r, u, c, h
        h_prev = H[t]
    return H, R, U, C


def gru_backward(W_r, W_u, W_c, E, h0, H, R, U, C, dH,
                 gW_r, gW_u, gW_c, gb_r, gb_u, gb_c, dE, dh0):
    """Backpropagate through :func:`gru_forward`.

    ``dH`` holds the externally injected gradient for every h_t; the
    recurrent contribution is threaded internally.  Weight/bias gradients
    accumulate into the ``g*`` buffers, per-step input gradients overwrite
    rows of ``dE``, and the gradient reaching the initial state overwrites
    ``dh0``.
    """
    T, d_e = E.shape
    carry = np.zeros_like(h0)
    for t in range(T - 1, -1, -1):
        h_prev = H[t - 1] if t > 0 else h0
        r, u, c = R[t], U[t], C[t]
        dh = dH[t] + carry
        du = dh * (h_prev - c)
        dc = dh * (1.0 - u)
        dh_prev = dh * u

        da_c = dc * (1.0 - c * c)
        zc = np.concatenate((E[t], r * h_prev))
        gW_c += np.outer(da_c, zc)
        gb_c += da_c
        dzc = W_c.T @ da_c
        de = dzc[:d_e].copy()
        drh = dzc[d_e:]
        dr = drh * h_prev
        dh_prev += drh * r

        da_u = du * u * (1.0 - u)
        z = np.concatenate((E[t], h_prev))
        gW_u += np.outer(da_u, z)
        gb_u += da_u
        dzu = W_u.T @ da_u
        de += dzu[:d_e]
        dh_prev += dzu[d_e:]

        da_r = dr * r * (1.0 - r)
        gW_r += np.outer(da_r, z)
        gb_r += da_r
        dzr = W_r.T @ da_r
        de += dzr[:d_e]
        dh_prev += dzr[d_e:]

        dE[t] = de
        carry = dh_prev
    dh0[:] = carry


def sampled_softmax_batch(U_sm, b_M, log_q, D, targets, negatives, scale,
                          dD, gU, gb_M):
    """Score decoded vectors against target-plus-negatives candidate sets.

    For each position p, candidates are [targets[p]] + negatives[p] (all
    distinct), with logits ``U_sm[w] . D[p] + b_M[w] - log_q[w]`` and loss
    the negative log softmax of the target.  Returns the summed loss.

    ``dD`` is overwritten with ``scale`` times the loss gradient w.r.t.
    ``D``; softmax-row and bias gradients (same scaling) accumulate into
    ``gU`` and ``gb_M``.
    """
    P = D.shape[0]
    cand = np.concatenate((targets[:, None], negatives), axis=1)  # (P, k+1)
    rows = U_sm[cand]                                             # (P, k+1, d_e)
    logits = np.einsum("pkd,pd->pk", rows, D) + b_M[cand] - log_q[cand]
    m = logits.max(axis=1, keepdims=True)
    ex = np.exp(logits - m)
    Z = ex.sum(axis=1)
    loss = float(np.sum(np.log(Z) + m[:, 0] - logits[:, 0]))
    g = ex / Z[:, None]
    g[:, 0] -= 1.0
    g *= scale
    dD[:] = np.einsum("pk,pkd->pd", g, rows)
    np.add.at(gU, cand.reshape(-1), (g[:, :, None] * D[:, None, :]).reshape(-1, D.shape[1]))
    np.add.at(gb_M, cand.reshape(-1), g.reshape(-1))
    return loss
