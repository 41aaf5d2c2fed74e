"""Scalar-loop reference implementations.

Everything here works on nested Python lists of floats with explicit loops,
so it shares no code path with the vectorized modules it cross-checks.
"""

import math


def softmax_row(row):
    m = max(row)
    exps = [math.exp(v - m) for v in row]
    total = sum(exps)
    return [e / total for e in exps]


def matmul(a, b):
    rows, inner, cols = len(a), len(b), len(b[0])
    out = []
    for i in range(rows):
        out.append([sum(a[i][t] * b[t][j] for t in range(inner))
                    for j in range(cols)])
    return out


def transpose(a):
    return [[a[i][j] for i in range(len(a))] for j in range(len(a[0]))]


def scaled_dot_attention_oracle(q, k, v):
    """softmax(q k^T / sqrt(D)) v with explicit loops; q, k, v row lists."""
    d = len(q[0])
    scale = 1.0 / math.sqrt(d)
    logits = [[sum(qr[t] * kr[t] for t in range(d)) * scale for kr in k]
              for qr in q]
    weights = [softmax_row(row) for row in logits]
    return matmul(weights, v)


def tokens_from_map(x):
    """B,C,H,W tensor (batch index 0) to an H*W x C row list, row-major."""
    _, c, h, w = x.shape
    return [[x[0, ch, i, j].item() for ch in range(c)]
            for i in range(h) for j in range(w)]


def map_from_tokens(tokens, c, h, w):
    out = [[[0.0] * w for _ in range(h)] for _ in range(c)]
    for t, row in enumerate(tokens):
        i, j = divmod(t, w)
        for ch in range(c):
            out[ch][i][j] = row[ch]
    return out


def cross_mix_oracle(x, module):
    """Full cross-mix attention on a 1,C,H,W input, gates included.

    The gate sub-blocks are evaluated through the module (they have their
    own scalar oracles); the token projections, both attentions, the output
    projection and the residual are reproduced here with loops.
    """
    _, c, h, w = x.shape
    xs = tokens_from_map(module.spatial_gate(x).detach())
    xc = tokens_from_map(module.channel_gate(x).detach())
    w1_q, w1_k, w1_v = (p.detach().tolist()
                        for p in (module.w1_q, module.w1_k, module.w1_v))
    w2_q, w2_k, w2_v = (p.detach().tolist()
                        for p in (module.w2_q, module.w2_k, module.w2_v))
    sa = scaled_dot_attention_oracle(matmul(xs, w1_q), matmul(xc, w1_k),
                                     matmul(xs, w1_v))
    ca = scaled_dot_attention_oracle(matmul(xc, w2_q), matmul(xs, w2_k),
                                     matmul(xc, w2_v))
    mixed = [[a + b for a, b in zip(ra, rb)] for ra, rb in zip(sa, ca)]
    proj = matmul(mixed, module.output_proj.detach().tolist())
    out = map_from_tokens(proj, c, h, w)
    if module.residual:
        for ch in range(c):
            for i in range(h):
                for j in range(w):
                    out[ch][i][j] += x[0, ch, i, j].item()
    return out


def external_attention_oracle(x, m_k, m_v):
    """Doubly normalized memory attention for one sample.

    Returns (token outputs, attention matrix). Softmax runs down each memory
    column over the tokens, then each token row is L1-normalized.
    """
    tokens = tokens_from_map(x)
    n, c = len(tokens), len(tokens[0])
    k_mem = len(m_k)
    logits = [[sum(tokens[i][ch] * m_k[j][ch] for ch in range(c))
               for j in range(k_mem)] for i in range(n)]
    attn = [[0.0] * k_mem for _ in range(n)]
    for j in range(k_mem):
        col = softmax_row([logits[i][j] for i in range(n)])
        for i in range(n):
            attn[i][j] = col[i]
    for i in range(n):
        total = sum(attn[i])
        attn[i] = [v / total for v in attn[i]]
    out = matmul(attn, m_v)
    return out, attn


def l1_scores_oracle(response):
    """Triple loop over pixels: per-sample, per-channel absolute mass."""
    b, c, h, w = response.shape
    return [[sum(abs(response[s, ch, i, j].item())
                 for i in range(h) for j in range(w))
             for ch in range(c)] for s in range(b)]


def topk_oracle(scores, k_sel):
    """Full sort then prefix; ties keep the lower channel index first."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    return order[:k_sel]


def msdf_combine_oracle(fused, alpha_levels, beta, group_width=4):
    """fused*alpha*beta + fused*alpha + fused with per-level alpha broadcast.

    fused: B,4n,H,W tensor; alpha_levels: per-sample list of n level gates;
    beta: B,1,H,W tensor.
    """
    b, c, h, w = fused.shape
    out = [[[[0.0] * w for _ in range(h)] for _ in range(c)] for _ in range(b)]
    for s in range(b):
        for ch in range(c):
            a = alpha_levels[s][ch // group_width]
            for i in range(h):
                for j in range(w):
                    f = fused[s, ch, i, j].item()
                    bt = beta[s, 0, i, j].item()
                    out[s][ch][i][j] = f * a * bt + f * a + f
    return out


def conv_layer_params(kernel_h, kernel_w, c_in, c_out, bias=False, bn=True):
    """Closed-form parameter count of one conv(+BN) layer."""
    n = kernel_h * kernel_w * c_in * c_out
    if bias:
        n += c_out
    if bn:
        n += 2 * c_out
    return n


def mrcf_param_oracle(in_channels, out_channels, branch_kernel_sizes):
    """Enumerates the block structure and sums closed-form layer counts.

    Branch stack: 1x1; 1x1+3x3; 1x1+3x3+3x3; then 1x1+1xn+nx1 per factorised
    size. Every branch feeds a four-way split whose three transformed groups
    are dilated 3x3s, and the concatenation ends in a 1x1 fuse. All convs are
    bias-free and carry batch norm.
    """
    w = out_channels
    layers = []
    branch_stacks = [[(1, 1, in_channels, w)],
                     [(1, 1, in_channels, w), (3, 3, w, w)],
                     [(1, 1, in_channels, w), (3, 3, w, w), (3, 3, w, w)]]
    for n in branch_kernel_sizes:
        branch_stacks.append([(1, 1, in_channels, w), (1, n, w, w), (n, 1, w, w)])
    for stack in branch_stacks:
        layers.extend(stack)
        g = w // 4
        layers.extend([(3, 3, g, g)] * 3)
    layers.append((1, 1, len(branch_stacks) * w, out_channels))
    return sum(conv_layer_params(*layer) for layer in layers)


def confusion_oracle(pred, target):
    """Pixel-loop confusion counts over two flat binary iterables."""
    tp = fp = fn = tn = 0
    for p, t in zip(pred, target):
        if p == 1 and t == 1:
            tp += 1
        elif p == 1 and t == 0:
            fp += 1
        elif p == 0 and t == 1:
            fn += 1
        else:
            tn += 1
    return tp, fp, fn, tn


def metrics_oracle(pred, target):
    tp, fp, fn, tn = confusion_oracle(pred, target)
    if tp + fp + fn == 0:
        return {"iou": 1.0, "dice": 1.0, "acc": 1.0, "precision": 1.0}
    def ratio(num, den):
        return num / den if den else 0.0
    return {
        "iou": ratio(tp, tp + fp + fn),
        "dice": ratio(2 * tp, 2 * tp + fp + fn),
        "acc": ratio(tp + tn, tp + fp + fn + tn),
        "precision": ratio(tp, tp + fp),
    }
