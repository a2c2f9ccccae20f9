"""Hot numeric kernels, written once in a numba-compilable numpy subset.

Every function here must remain valid plain Python: the package wraps them
with ``numba.njit`` unless the numpy backend is selected (see
``segal.kernels``). Kernels therefore avoid calling each other and stick to
explicit loops, 2-D BLAS matmuls and elementwise array math.

Shape conventions: LSTM arrays are time-major ``[L, B, *]``; CRF emission
arrays are batch-major ``[B, L, N]`` with true lengths passed separately.
Transition matrices are ``[N+2, N+2]`` with start state ``N`` and stop state
``N+1``; illegal entries carry ``-inf`` (or any large negative value) and
must leave at least one finite path.
"""

import numpy as np

NEG_INF = -np.inf


# ---------------------------------------------------------------------------
# LSTM: fused sequence forward / backward (one direction)
# ---------------------------------------------------------------------------

def lstm_forward(X, mask, W, U, b):
    """Run an LSTM over a padded batch.

    X: [L, B, D] inputs, mask: [L, B] 1.0 for real positions, W: [D, 4H],
    U: [H, 4H], b: [4H]; gate columns are packed (forget, input, output,
    candidate). Returns (Hout, F, I, O, G, C), each [L, B, H]; cell and
    hidden states are zeroed at masked positions so padding cannot leak
    across a flipped sequence.
    """
    L, B, _ = X.shape
    H = U.shape[0]
    F = np.zeros((L, B, H))
    I = np.zeros((L, B, H))
    O = np.zeros((L, B, H))
    G = np.zeros((L, B, H))
    C = np.zeros((L, B, H))
    Hout = np.zeros((L, B, H))
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    for t in range(L):
        Z = X[t] @ W + h @ U + b
        f = 1.0 / (1.0 + np.exp(-Z[:, :H]))
        i = 1.0 / (1.0 + np.exp(-Z[:, H : 2 * H]))
        o = 1.0 / (1.0 + np.exp(-Z[:, 2 * H : 3 * H]))
        g = np.tanh(Z[:, 3 * H :])
        m = mask[t].copy().reshape(B, 1)
        c = m * (c * f + i * g)
        h = m * (o * np.tanh(c))
        F[t] = f
        I[t] = i
        O[t] = o
        G[t] = g
        C[t] = c
        Hout[t] = h
    return Hout, F, I, O, G, C


def lstm_backward(dHout, X, mask, W_T, U, U_T, F, I, O, G, C, Hout):
    """Backpropagate through lstm_forward.

    dHout: [L, B, H] upstream gradient on the hidden outputs; W_T: [4H, D]
    and U_T: [4H, H] are pre-transposed copies. Returns (dX, dW, dU, db).
    """
    L, B, H = dHout.shape
    dZs = np.zeros((L, B, 4 * H))
    dh = np.zeros((B, H))
    dc = np.zeros((B, H))
    for t in range(L - 1, -1, -1):
        m = mask[t].copy().reshape(B, 1)
        tc = np.tanh(C[t])
        dht = dHout[t] + dh
        do = dht * m * tc
        dc = dc + dht * m * O[t] * (1.0 - tc * tc)
        ds = dc * m
        if t > 0:
            c_prev = C[t - 1]
        else:
            c_prev = np.zeros((B, H))
        f = F[t]
        i = I[t]
        o = O[t]
        g = G[t]
        dZ = np.zeros((B, 4 * H))
        dZ[:, :H] = (ds * c_prev) * f * (1.0 - f)
        dZ[:, H : 2 * H] = (ds * g) * i * (1.0 - i)
        dZ[:, 2 * H : 3 * H] = do * o * (1.0 - o)
        dZ[:, 3 * H :] = (ds * i) * (1.0 - g * g)
        dZs[t] = dZ
        dh = dZ @ U_T
        dc = ds * f
    D = W_T.shape[1]
    Xflat = X.reshape(L * B, D)
    dZflat = dZs.reshape(L * B, 4 * H)
    Hprev = np.zeros_like(Hout)
    Hprev[1:] = Hout[: L - 1]
    dX = (dZflat @ W_T).reshape(L, B, D)
    dW = Xflat.T @ dZflat
    dU = Hprev.reshape(L * B, H).T @ dZflat
    db = np.zeros(4 * H)
    for r in range(L * B):
        db += dZflat[r]
    return dX, dW, dU, db


# ---------------------------------------------------------------------------
# Linear-chain CRF: NLL + gradient, marginals, Viterbi
# ---------------------------------------------------------------------------

def crf_nll_grad(emis, trans, tags, lengths):
    """Per-sentence CRF negative log-likelihoods and their gradient.

    emis: [B, Lmax, N], trans: [N+2, N+2], tags: [B, Lmax] int64 gold tag
    ids, lengths: [B] int64. Returns (nll [B], demis [B, Lmax, N], dtrans
    [B, N+2, N+2]); demis is the token-marginal minus gold one-hot, dtrans
    the expected minus observed transition counts per sentence.
    """
    Bn, Lmax, N = emis.shape
    start = N
    stop = N + 1
    nll = np.zeros(Bn)
    demis = np.zeros((Bn, Lmax, N))
    dtrans = np.zeros((Bn, N + 2, N + 2))
    alpha = np.zeros((Lmax, N))
    beta = np.zeros((Lmax, N))
    for s in range(Bn):
        L = int(lengths[s])
        # forward
        for j in range(N):
            alpha[0, j] = trans[start, j] + emis[s, 0, j]
        for t in range(1, L):
            for j in range(N):
                m = NEG_INF
                for i in range(N):
                    v = alpha[t - 1, i] + trans[i, j]
                    if v > m:
                        m = v
                if m == NEG_INF:
                    alpha[t, j] = NEG_INF
                else:
                    acc = 0.0
                    for i in range(N):
                        acc += np.exp(alpha[t - 1, i] + trans[i, j] - m)
                    alpha[t, j] = emis[s, t, j] + m + np.log(acc)
        m = NEG_INF
        for j in range(N):
            v = alpha[L - 1, j] + trans[j, stop]
            if v > m:
                m = v
        acc = 0.0
        for j in range(N):
            acc += np.exp(alpha[L - 1, j] + trans[j, stop] - m)
        logz = m + np.log(acc)
        # backward
        for i in range(N):
            beta[L - 1, i] = trans[i, stop]
        for t in range(L - 2, -1, -1):
            for i in range(N):
                m = NEG_INF
                for j in range(N):
                    v = trans[i, j] + emis[s, t + 1, j] + beta[t + 1, j]
                    if v > m:
                        m = v
                if m == NEG_INF:
                    beta[t, i] = NEG_INF
                else:
                    acc = 0.0
                    for j in range(N):
                        acc += np.exp(
                            trans[i, j] + emis[s, t + 1, j] + beta[t + 1, j] - m
                        )
                    beta[t, i] = m + np.log(acc)
        # gold path score
        score = trans[start, tags[s, 0]] + emis[s, 0, tags[s, 0]]
        for t in range(1, L):
            score += trans[tags[s, t - 1], tags[s, t]] + emis[s, t, tags[s, t]]
        score += trans[tags[s, L - 1], stop]
        nll[s] = logz - score
        # gradient: marginals minus one-hot on emissions
        for t in range(L):
            for k in range(N):
                demis[s, t, k] = np.exp(alpha[t, k] + beta[t, k] - logz)
            demis[s, t, tags[s, t]] -= 1.0
        # expected transition counts
        for j in range(N):
            p = np.exp(trans[start, j] + emis[s, 0, j] + beta[0, j] - logz)
            dtrans[s, start, j] += p
        for i in range(N):
            p = np.exp(alpha[L - 1, i] + trans[i, stop] - logz)
            dtrans[s, i, stop] += p
        for t in range(L - 1):
            for i in range(N):
                for j in range(N):
                    v = (
                        alpha[t, i]
                        + trans[i, j]
                        + emis[s, t + 1, j]
                        + beta[t + 1, j]
                        - logz
                    )
                    dtrans[s, i, j] += np.exp(v)
        # observed counts
        dtrans[s, start, tags[s, 0]] -= 1.0
        for t in range(1, L):
            dtrans[s, tags[s, t - 1], tags[s, t]] -= 1.0
        dtrans[s, tags[s, L - 1], stop] -= 1.0
    return nll, demis, dtrans


def crf_marginals(emis, trans, lengths):
    """Token posteriors P(y_t = k | x) by forward-backward in log space.

    Returns (marg [B, Lmax, N] zero-padded, logz [B], logz_bwd [B]); the two
    partition estimates come from the forward and backward recursions and
    agree up to float error.
    """
    Bn, Lmax, N = emis.shape
    start = N
    stop = N + 1
    marg = np.zeros((Bn, Lmax, N))
    logz = np.zeros(Bn)
    logz_bwd = np.zeros(Bn)
    alpha = np.zeros((Lmax, N))
    beta = np.zeros((Lmax, N))
    for s in range(Bn):
        L = int(lengths[s])
        for j in range(N):
            alpha[0, j] = trans[start, j] + emis[s, 0, j]
        for t in range(1, L):
            for j in range(N):
                m = NEG_INF
                for i in range(N):
                    v = alpha[t - 1, i] + trans[i, j]
                    if v > m:
                        m = v
                if m == NEG_INF:
                    alpha[t, j] = NEG_INF
                else:
                    acc = 0.0
                    for i in range(N):
                        acc += np.exp(alpha[t - 1, i] + trans[i, j] - m)
                    alpha[t, j] = emis[s, t, j] + m + np.log(acc)
        m = NEG_INF
        for j in range(N):
            v = alpha[L - 1, j] + trans[j, stop]
            if v > m:
                m = v
        acc = 0.0
        for j in range(N):
            acc += np.exp(alpha[L - 1, j] + trans[j, stop] - m)
        logz[s] = m + np.log(acc)
        for i in range(N):
            beta[L - 1, i] = trans[i, stop]
        for t in range(L - 2, -1, -1):
            for i in range(N):
                m = NEG_INF
                for j in range(N):
                    v = trans[i, j] + emis[s, t + 1, j] + beta[t + 1, j]
                    if v > m:
                        m = v
                if m == NEG_INF:
                    beta[t, i] = NEG_INF
                else:
                    acc = 0.0
                    for j in range(N):
                        acc += np.exp(
                            trans[i, j] + emis[s, t + 1, j] + beta[t + 1, j] - m
                        )
                    beta[t, i] = m + np.log(acc)
        m = NEG_INF
        for i in range(N):
            v = trans[start, i] + emis[s, 0, i] + beta[0, i]
            if v > m:
                m = v
        acc = 0.0
        for i in range(N):
            acc += np.exp(trans[start, i] + emis[s, 0, i] + beta[0, i] - m)
        logz_bwd[s] = m + np.log(acc)
        for t in range(L):
            for k in range(N):
                marg[s, t, k] = np.exp(alpha[t, k] + beta[t, k] - logz[s])
    return marg, logz, logz_bwd


def crf_viterbi(emis, trans, lengths):
    """Most likely tag paths and their log posterior probabilities.

    Returns (paths [B, Lmax] int64, -1 beyond each length; logprob [B] =
    best path score minus log partition). Score ties break toward the
    lowest tag index.
    """
    Bn, Lmax, N = emis.shape
    start = N
    stop = N + 1
    paths = -np.ones((Bn, Lmax), dtype=np.int64)
    logprob = np.zeros(Bn)
    delta = np.zeros((Lmax, N))
    bp = np.zeros((Lmax, N), dtype=np.int64)
    alpha = np.zeros(N)
    alpha_next = np.zeros(N)
    for s in range(Bn):
        L = int(lengths[s])
        for j in range(N):
            delta[0, j] = trans[start, j] + emis[s, 0, j]
            alpha[j] = delta[0, j]
        for t in range(1, L):
            for j in range(N):
                best = NEG_INF
                arg = 0
                for i in range(N):
                    v = delta[t - 1, i] + trans[i, j]
                    if v > best:
                        best = v
                        arg = i
                delta[t, j] = emis[s, t, j] + best
                bp[t, j] = arg
                # forward pass rides along for the partition function
                m = NEG_INF
                for i in range(N):
                    v = alpha[i] + trans[i, j]
                    if v > m:
                        m = v
                if m == NEG_INF:
                    alpha_next[j] = NEG_INF
                else:
                    acc = 0.0
                    for i in range(N):
                        acc += np.exp(alpha[i] + trans[i, j] - m)
                    alpha_next[j] = emis[s, t, j] + m + np.log(acc)
            for j in range(N):
                alpha[j] = alpha_next[j]
        best = NEG_INF
        arg = 0
        for j in range(N):
            v = delta[L - 1, j] + trans[j, stop]
            if v > best:
                best = v
                arg = j
        m = NEG_INF
        for j in range(N):
            v = alpha[j] + trans[j, stop]
            if v > m:
                m = v
        acc = 0.0
        for j in range(N):
            acc += np.exp(alpha[j] + trans[j, stop] - m)
        logz = m + np.log(acc)
        paths[s, L - 1] = arg
        for t in range(L - 1, 0, -1):
            paths[s, t - 1] = bp[t, paths[s, t]]
        logprob[s] = best - logz
    return paths, logprob


def crf_logz(emis, trans, lengths):
    """Log partition function per sentence (forward recursion only)."""
    Bn, Lmax, N = emis.shape
    start = N
    stop = N + 1
    out = np.zeros(Bn)
    alpha = np.zeros((Lmax, N))
    for s in range(Bn):
        L = int(lengths[s])
        for j in range(N):
            alpha[0, j] = trans[start, j] + emis[s, 0, j]
        for t in range(1, L):
            for j in range(N):
                m = NEG_INF
                for i in range(N):
                    v = alpha[t - 1, i] + trans[i, j]
                    if v > m:
                        m = v
                if m == NEG_INF:
                    alpha[t, j] = NEG_INF
                else:
                    acc = 0.0
                    for i in range(N):
                        acc += np.exp(alpha[t - 1, i] + trans[i, j] - m)
                    alpha[t, j] = emis[s, t, j] + m + np.log(acc)
        m = NEG_INF
        for j in range(N):
            v = alpha[L - 1, j] + trans[j, stop]
            if v > m:
                m = v
        acc = 0.0
        for j in range(N):
            acc += np.exp(alpha[L - 1, j] + trans[j, stop] - m)
        out[s] = m + np.log(acc)
    return out


# ---------------------------------------------------------------------------
# Skip-gram with negative sampling
# ---------------------------------------------------------------------------

def sgns_epoch(centers, contexts, negatives, w_in, w_out, lr_start, lr_end):
    """One pass of skip-gram negative-sampling updates, in place.

    centers/contexts: [P] int64 token ids, negatives: [P, K] int64 sampled
    ids, w_in/w_out: [V, D] tables. The learning rate interpolates linearly
    from lr_start to lr_end across the P pairs. Returns the mean pair loss
    measured before each update.
    """
    P = centers.shape[0]
    K = negatives.shape[1]
    D = w_in.shape[1]
    dv = np.zeros(D)
    total = 0.0
    for p in range(P):
        if P > 1:
            lr = lr_start + (lr_end - lr_start) * (p / (P - 1))
        else:
            lr = lr_start
        c = centers[p]
        for d in range(D):
            dv[d] = 0.0
        loss = 0.0
        for k in range(K + 1):
            if k == 0:
                tgt = contexts[p]
                label = 1.0
            else:
                tgt = negatives[p, k - 1]
                label = 0.0
            dot = 0.0
            for d in range(D):
                dot += w_in[c, d] * w_out[tgt, d]
            sig = 1.0 / (1.0 + np.exp(-dot))
            if label > 0.5:
                loss -= np.log(max(sig, 1e-12))
            else:
                loss -= np.log(max(1.0 - sig, 1e-12))
            g = lr * (label - sig)
            for d in range(D):
                dv[d] += g * w_out[tgt, d]
                w_out[tgt, d] += g * w_in[c, d]
        for d in range(D):
            w_in[c, d] += dv[d]
        total += loss
    return total / max(P, 1)
