"""Independent brute-force reimplementations used as test oracles."""

import math

import numpy as np


def naive_reward(dx, d, v):
    """Independent re-statement of the reward table, written as one flat chain."""
    if abs(dx) > 85:
        return -3.0
    if d < 2:
        return -3.0
    lane = 1 - abs(dx) / 100
    if 4 <= d and d <= 8:
        lidar = -5 * (8 - d) / 4
    elif d < 2.8:
        lidar = -10 + 2 * d
    elif (3 <= d and d <= 4) or (8 <= d and d <= 10):
        lidar = 5.0
    else:
        lidar = 0.0
    speed = -((v - 20) / 20) ** 2
    center = -2.5 * (abs(dx) / 80) ** 2
    s = 0.3 * lane + 0.3 * lidar + 0.2 * speed + 0.2 * center
    return max(-1.0, min(1.0, s))


def gae_series(rewards, values, dones, last_value, gamma, lam):
    """A_t = sum_l (gamma lam)^l delta_{t+l}, truncated at the first done."""
    n = len(rewards)
    nxt = list(values[1:]) + [last_value]
    delta = [rewards[t] + gamma * nxt[t] * (1 - dones[t]) - values[t] for t in range(n)]
    adv = []
    for t in range(n):
        total, coef = 0.0, 1.0
        for k in range(t, n):
            total += coef * delta[k]
            if dones[k]:
                break
            coef *= gamma * lam
        adv.append(total)
    return np.array(adv)


def naive_metrics(y_px):
    d = [y * 5 / 235 for y in y_px]
    n = len(d)
    rmse = math.sqrt(sum(v * v for v in d) / n)
    mean = sum(d) / n
    std = math.sqrt(sum((v - mean) ** 2 for v in d) / n)
    return rmse, std, rmse / 5


def dense_attention(x, blk, use_lora=True):
    """Element-by-element loops: Q = X (W + B A), softmax over keys, weighted sum of V."""
    n, d = x.shape
    r = blk.a_q.shape[0]

    def eff(w, b, a):
        out = [[w[i][j] for j in range(d)] for i in range(d)]
        if use_lora:
            for i in range(d):
                for j in range(d):
                    out[i][j] += sum(b[i][k] * a[k][j] for k in range(r))
        return out

    def proj(w):
        return [[sum(x[t][i] * w[i][j] for i in range(d)) for j in range(d)] for t in range(n)]

    q, k, v = proj(eff(blk.w_q, blk.b_q, blk.a_q)), proj(eff(blk.w_k, blk.b_k, blk.a_k)), proj(blk.w_v)
    out = []
    for t in range(n):
        s = [sum(q[t][j] * k[u][j] for j in range(d)) / math.sqrt(d) for u in range(n)]
        m = max(s)
        e = [math.exp(z - m) for z in s]
        tot = sum(e)
        out.append([sum(e[u] / tot * v[u][j] for u in range(n)) for j in range(d)])
    return np.array(out)
