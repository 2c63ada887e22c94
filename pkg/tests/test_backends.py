"""Kernel-level checks, run against every available backend.

The scalar transcription of the gate equations below is the independent
oracle; both backends must reproduce it to near machine precision, and the
batched candidate scorer must agree with the single-position reference op.
"""

import math

import numpy as np
import pytest

from mmembed.backends import available_backends, get_backend
from mmembed.model import sampled_softmax_loss

BACKENDS = available_backends()


def scalar_gru_sequence(W_r, W_u, W_c, b_r, b_u, b_c, E, h0):
    """Plain-Python loop transcription of the gate equations."""
    d_h = len(h0)
    d_e = len(E[0])
    h_prev = list(h0)
    states = []
    for e_t in E:
        z = list(e_t) + h_prev
        r = [1.0 / (1.0 + math.exp(-(sum(W_r[i][j] * z[j] for j in range(d_e + d_h)) + b_r[i])))
             for i in range(d_h)]
        u = [1.0 / (1.0 + math.exp(-(sum(W_u[i][j] * z[j] for j in range(d_e + d_h)) + b_u[i])))
             for i in range(d_h)]
        zc = list(e_t) + [r[i] * h_prev[i] for i in range(d_h)]
        c = [math.tanh(sum(W_c[i][j] * zc[j] for j in range(d_e + d_h)) + b_c[i])
             for i in range(d_h)]
        h = [u[i] * h_prev[i] + (1.0 - u[i]) * c[i] for i in range(d_h)]
        states.append(h)
        h_prev = h
    return np.array(states)


def make_gru_inputs(rng, T=5, d_e=3, d_h=4):
    W = [rng.normal(0, 0.4, size=(d_h, d_e + d_h)) for _ in range(3)]
    b = [rng.normal(0, 0.3, size=d_h) for _ in range(3)]
    E = rng.normal(0, 0.6, size=(T, d_e))
    h0 = rng.normal(0, 0.5, size=d_h)
    return (*W, *b, E, h0)


@pytest.mark.parametrize("backend", BACKENDS)
def test_gru_forward_matches_scalar_oracle(backend, rng):
    kernels = get_backend(backend)
    args = make_gru_inputs(rng)
    H, _, _, _ = kernels.gru_forward(*args)
    expected = scalar_gru_sequence(*[np.asarray(a).tolist() for a in args[:6]],
                                   args[6].tolist(), args[7].tolist())
    assert np.abs(H - expected).max() < 1e-12


@pytest.mark.parametrize("backend", BACKENDS)
def test_gru_backward_matches_finite_differences(backend, rng):
    kernels = get_backend(backend)
    W_r, W_u, W_c, b_r, b_u, b_c, E, h0 = make_gru_inputs(rng)
    T, d_h = E.shape[0], h0.shape[0]
    probe = rng.normal(size=(T, d_h))  # makes the loss a scalar of every state

    def loss(W_r, W_u, W_c, b_r, b_u, b_c, E, h0):
        H, _, _, _ = kernels.gru_forward(W_r, W_u, W_c, b_r, b_u, b_c, E, h0)
        return float((probe * H).sum())

    H, R, U, C = kernels.gru_forward(W_r, W_u, W_c, b_r, b_u, b_c, E, h0)
    grads = {name: np.zeros_like(arr) for name, arr in
             [("W_r", W_r), ("W_u", W_u), ("W_c", W_c),
              ("b_r", b_r), ("b_u", b_u), ("b_c", b_c)]}
    dE = np.empty_like(E)
    dh0 = np.empty_like(h0)
    kernels.gru_backward(W_r, W_u, W_c, E, h0, H, R, U, C, probe.copy(),
                         grads["W_r"], grads["W_u"], grads["W_c"],
                         grads["b_r"], grads["b_u"], grads["b_c"], dE, dh0)
    grads["E"], grads["h0"] = dE, dh0

    tensors = {"W_r": W_r, "W_u": W_u, "W_c": W_c, "b_r": b_r, "b_u": b_u,
               "b_c": b_c, "E": E, "h0": h0}
    h = 1e-6
    worst = 0.0
    for name, arr in tensors.items():
        flat = arr.reshape(-1)
        for i in range(flat.shape[0]):
            orig = flat[i]
            flat[i] = orig + h
            lp = loss(**tensors)
            flat[i] = orig - h
            lm = loss(**tensors)
            flat[i] = orig
            numeric = (lp - lm) / (2 * h)
            analytic = grads[name].reshape(-1)[i]
            worst = max(worst, abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8))
    assert worst < 1e-6, f"worst rel err {worst:.3e} on backend {backend}"


@pytest.mark.parametrize("backend", BACKENDS)
def test_gru_backward_accumulates(backend, rng):
    kernels = get_backend(backend)
    args = make_gru_inputs(rng)
    W_r, W_u, W_c, b_r, b_u, b_c, E, h0 = args
    H, R, U, C = kernels.gru_forward(*args)
    dH = rng.normal(size=H.shape)

    def run(seed_bufs):
        bufs = [b.copy() for b in seed_bufs]
        dE = np.empty_like(E)
        dh0 = np.empty_like(h0)
        kernels.gru_backward(W_r, W_u, W_c, E, h0, H, R, U, C, dH, *bufs, dE, dh0)
        return bufs

    zeros = [np.zeros_like(W_r), np.zeros_like(W_u), np.zeros_like(W_c),
             np.zeros_like(b_r), np.zeros_like(b_u), np.zeros_like(b_c)]
    ones = [np.ones_like(b) for b in zeros]
    from_zero = run(zeros)
    from_one = run(ones)
    for a, b in zip(from_zero, from_one):
        assert np.allclose(b - a, 1.0, atol=1e-12)


@pytest.mark.parametrize("backend", BACKENDS)
def test_sampled_softmax_batch_matches_single_op(backend, rng):
    kernels = get_backend(backend)
    V, d_e, P, k = 30, 6, 7, 5
    U = rng.normal(0, 0.5, size=(V, d_e))
    b_M = rng.normal(0, 0.5, size=V)
    q = rng.uniform(0.5, 2.0, size=V)
    q /= q.sum()
    log_q = np.log(q)
    D = rng.normal(0, 0.8, size=(P, d_e))
    targets = rng.integers(0, V, size=P).astype(np.int64)
    negs = np.empty((P, k), dtype=np.int64)
    for p in range(P):
        pool = np.setdiff1d(np.arange(V), [targets[p]])
        negs[p] = rng.choice(pool, size=k, replace=False)

    scale = 1.0 / P
    dD = np.empty_like(D)
    gU = np.zeros_like(U)
    gb = np.zeros_like(b_M)
    total = kernels.sampled_softmax_batch(U, b_M, log_q, D, targets, negs,
                                          scale, dD, gU, gb)

    exp_total = 0.0
    exp_gU = np.zeros_like(U)
    exp_gb = np.zeros_like(b_M)
    for p in range(P):
        loss, grads = sampled_softmax_loss(U, b_M, D[p], targets[p], negs[p], q)
        exp_total += loss
        assert np.abs(dD[p] - scale * grads.d_decoded).max() < 1e-12
        exp_gU[grads.candidates] += scale * grads.d_rows
        exp_gb[grads.candidates] += scale * grads.d_bias
    assert abs(total - exp_total) < 1e-10
    assert np.abs(gU - exp_gU).max() < 1e-12
    assert np.abs(gb - exp_gb).max() < 1e-12


@pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled backend not built")
def test_backends_agree(rng):
    np_k = get_backend("numpy")
    cy_k = get_backend("cython")
    for trial in range(5):
        args = make_gru_inputs(rng, T=int(rng.integers(1, 8)),
                               d_e=int(rng.integers(1, 6)),
                               d_h=int(rng.integers(1, 7)))
        out_np = np_k.gru_forward(*args)
        out_cy = cy_k.gru_forward(*args)
        for a, b in zip(out_np, out_cy):
            assert np.abs(a - b).max() < 1e-13

        W_r, W_u, W_c, b_r, b_u, b_c, E, h0 = args
        H, R, U, C = out_np
        dH = rng.normal(size=H.shape)
        results = []
        for kernels in (np_k, cy_k):
            bufs = [np.zeros_like(x) for x in (W_r, W_u, W_c, b_r, b_u, b_c)]
            dE = np.empty_like(E)
            dh0 = np.empty_like(h0)
            kernels.gru_backward(W_r, W_u, W_c, E, h0, H, R, U, C, dH, *bufs, dE, dh0)
            results.append(bufs + [dE, dh0])
        for a, b in zip(*results):
            assert np.abs(a - b).max() < 1e-12
