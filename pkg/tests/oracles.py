"""Scalar-loop reference implementations used as independent test oracles.

Nothing here touches the tensor library; inputs are nested Python lists.
"""

import math


def _matmul(a, b):
    return [[sum(a[i][k] * b[k][j] for k in range(len(b))) for j in range(len(b[0]))] for i in range(len(a))]


def _add_row(x, bias):
    return [[v + bias[j] for j, v in enumerate(row)] for row in x]


def _softmax(logits):
    m = max(logits)
    e = [math.exp(v - m) for v in logits]
    z = sum(e)
    return [v / z for v in e]


def naive_multi_head(Q, K, V, Wq, Wk, Wv, Wo, scaled=False):
    heads = []
    for h in range(len(Wq)):
        d_p = len(Wq[h][0])
        factor = 1 / math.sqrt(d_p) if scaled else 1.0
        qh, kh, vh = _matmul(Q, Wq[h]), _matmul(K, Wk[h]), _matmul(V, Wv[h])
        out = []
        for a in range(len(Q)):
            logits = [factor * sum(qh[a][p] * kh[b][p] for p in range(d_p)) for b in range(len(K))]
            w = _softmax(logits)
            out.append([sum(w[b] * vh[b][p] for b in range(len(K))) for p in range(d_p)])
        heads.append(out)
    concat = [sum((heads[h][a] for h in range(len(heads))), []) for a in range(len(Q))]
    return _matmul(concat, Wo)


def naive_highway(Q, K, V, Wq, Wk, Wv, Wo, b_co, b_self, scaled=False, with_weights=False):
    """Row ``a`` of head ``h`` mixes V^h rows and Q^{Vh}_a with one softmax
    over the co-attention logits plus the self logit."""
    heads, weights = [], []
    k_b = _add_row(K, b_co)
    q_b = _add_row(Q, b_self)
    for h in range(len(Wq)):
        d_p = len(Wq[h][0])
        factor = 1 / math.sqrt(d_p) if scaled else 1.0
        qh = _matmul(Q, Wq[h])
        kh = _matmul(k_b, Wk[h])
        vh = _matmul(V, Wv[h])
        q_kh = _matmul(q_b, Wk[h])
        q_vh = _matmul(Q, Wv[h])
        out, ws = [], []
        for a in range(len(Q)):
            co = [factor * sum(qh[a][p] * kh[b][p] for p in range(d_p)) for b in range(len(K))]
            self_logit = factor * sum(qh[a][p] * q_kh[a][p] for p in range(d_p))
            w = _softmax(co + [self_logit])
            row = []
            for p in range(d_p):
                acc = sum(w[b] * vh[b][p] for b in range(len(K)))
                acc += w[len(K)] * q_vh[a][p]
                row.append(acc)
            out.append(row)
            ws.append(w)
        heads.append(out)
        weights.append(ws)
    concat = [sum((heads[h][a] for h in range(len(heads))), []) for a in range(len(Q))]
    out = _matmul(concat, Wo)
    return (out, weights) if with_weights else out


def naive_ffn(x_row, W1, b1, W2, b2):
    hidden = [max(0.0, sum(x_row[i] * W1[i][j] for i in range(len(x_row))) + b1[j]) for j in range(len(b1))]
    return [sum(hidden[j] * W2[j][k] for j in range(len(hidden))) + b2[k] for k in range(len(b2))]


def naive_pool_attention(X, w):
    alpha = [sum(wi * xi for wi, xi in zip(w, row)) for row in X]
    return [sum(alpha[k] * X[k][d] for k in range(len(X))) for d in range(len(w))]


def naive_lse(values):
    m = max(values)
    return m + math.log(sum(math.exp(v - m) for v in values))


def naive_ranking_loss(scores, labels, gamma):
    neg = [s for s, y in zip(scores, labels) if y == 0]
    pos = [-s for s, y in zip(scores, labels) if y == 1]
    return max(0.0, naive_lse(neg) + naive_lse(pos) + gamma)


def naive_bce(scores, labels):
    total = 0.0
    for s, y in zip(scores, labels):
        # -[y log sigma(s) + (1 - y) log(1 - sigma(s))]
        log_sig = -math.log1p(math.exp(-s)) if s >= 0 else s - math.log1p(math.exp(s))
        log_one_minus = -s + log_sig
        total -= y * log_sig + (1 - y) * log_one_minus
    return total / len(scores)
