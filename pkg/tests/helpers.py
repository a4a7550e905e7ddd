"""Independent oracles shared by the unit and acceptance tests.

Everything here is deliberately written the slow, obvious way (python loops,
scalar math) so it stays independent of the vectorized implementations it
checks.
"""

import math

import numpy as np

from capsnet.tensor import Tensor


# ---------------------------------------------------------------------------
# finite-difference gradient checking
# ---------------------------------------------------------------------------


def numeric_grad(build_loss, param: Tensor, h: float = 1e-3) -> np.ndarray:
    """Central finite differences of build_loss() w.r.t. every param element."""
    flat = param.data.reshape(-1)
    grad = np.zeros(flat.size, dtype=np.float64)
    for i in range(flat.size):
        orig = float(flat[i])
        flat[i] = orig + h
        up = build_loss().item()
        flat[i] = orig - h
        down = build_loss().item()
        flat[i] = orig
        grad[i] = (up - down) / (2.0 * h)
    return grad.reshape(param.data.shape)


def analytic_grads(build_loss, params) -> list[np.ndarray]:
    for p in params:
        p.grad = None
    loss = build_loss()
    loss.backward()
    return [np.array(p.grad, dtype=np.float64) for p in params]


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(float(np.linalg.norm(a)), float(np.linalg.norm(b)), 1e-8)
    return float(np.linalg.norm(a - b)) / denom


def assert_grads_match(build_loss, params, rtol: float = 1e-3, h: float = 1e-3):
    analytic = analytic_grads(build_loss, params)
    for p, a in zip(params, analytic):
        n = numeric_grad(build_loss, p, h=h)
        err = relative_error(a, n)
        assert err < rtol, f"gradient mismatch: rel error {err:.2e} >= {rtol} (shape {p.data.shape})"


# ---------------------------------------------------------------------------
# naive reference implementations
# ---------------------------------------------------------------------------


def matmul_oracle(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n), dtype=np.float64)
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for t in range(k):
                acc += float(a[i, t]) * float(b[t, j])
            out[i, j] = acc
    return out


def conv2d_oracle(x: np.ndarray, w: np.ndarray, bias: np.ndarray, stride: int, padding: int) -> np.ndarray:
    """Seven-loop cross-correlation on a [B,C,H,W] input."""
    bsz, c_in, h, ww = x.shape
    c_out, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (ww + 2 * padding - kw) // stride + 1
    out = np.zeros((bsz, c_out, ho, wo), dtype=np.float64)
    for b in range(bsz):
        for o in range(c_out):
            for i in range(ho):
                for j in range(wo):
                    acc = float(bias[o])
                    for c in range(c_in):
                        for p in range(kh):
                            for q in range(kw):
                                acc += float(xp[b, c, i * stride + p, j * stride + q]) * float(w[o, c, p, q])
                    out[b, o, i, j] = acc
    return out


def softmax_oracle(row) -> list[float]:
    exps = [math.exp(float(v)) for v in row]
    total = sum(exps)
    return [e / total for e in exps]


def squash_oracle(vec) -> list[float]:
    n2 = sum(float(v) * float(v) for v in vec)
    if n2 == 0.0:
        return [0.0 for _ in vec]
    factor = n2 / (1.0 + n2) / math.sqrt(n2)
    return [factor * float(v) for v in vec]


def routing_oracle(votes, iterations: int):
    """Scalar transcription of the routing loop.

    ``votes`` is a nested [N][C][E] list. Per iteration the coupling is the
    row softmax of the logits, each class capsule is the coupling-weighted
    vote sum then squashed, and the logits grow by vote-capsule dot products
    (skipped after the final iteration). Returns (v, logits, couplings) with
    ``couplings`` holding every iteration's coupling matrix.
    """
    n = len(votes)
    c = len(votes[0])
    e = len(votes[0][0])
    logits = [[0.0] * c for _ in range(n)]
    couplings = []
    v = None
    for it in range(iterations):
        coupling = [softmax_oracle(logits[i]) for i in range(n)]
        couplings.append(coupling)
        s = [[sum(coupling[i][j] * float(votes[i][j][k]) for i in range(n)) for k in range(e)] for j in range(c)]
        v = [squash_oracle(s[j]) for j in range(c)]
        if it + 1 < iterations:
            for i in range(n):
                for j in range(c):
                    logits[i][j] += sum(float(votes[i][j][k]) * v[j][k] for k in range(e))
    return v, logits, couplings
