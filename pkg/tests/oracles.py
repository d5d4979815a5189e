"""Independent brute-force oracles the library tests compare against.

Everything here is deliberately naive (nested loops, no vectorization,
no reuse of library code paths) so a bug in the engine cannot hide in
its own mirror image.
"""

import numpy as np


def naive_conv2d(x, w, b):
    """Six nested loops, 3x3 kernel, stride 1, zero padding 1."""
    N, C1, H, W = x.shape
    C2 = w.shape[0]
    out = np.zeros((N, C2, H, W), dtype=np.float64)
    for n in range(N):
        for o in range(C2):
            for i in range(H):
                for j in range(W):
                    acc = float(b[o])
                    for c in range(C1):
                        for ki in range(3):
                            for kj in range(3):
                                ii = i + ki - 1
                                jj = j + kj - 1
                                if 0 <= ii < H and 0 <= jj < W:
                                    acc += float(x[n, c, ii, jj]) * float(w[o, c, ki, kj])
                    out[n, o, i, j] = acc
    return out


def naive_avg_pool2(x):
    N, C, H, W = x.shape
    out = np.zeros((N, C, H // 2, W // 2), dtype=np.float64)
    for n in range(N):
        for c in range(C):
            for i in range(H // 2):
                for j in range(W // 2):
                    block = [float(x[n, c, 2 * i + a, 2 * j + b])
                             for a in range(2) for b in range(2)]
                    out[n, c, i, j] = sum(block) / 4.0
    return out


def naive_upsample2(x):
    N, C, H, W = x.shape
    out = np.zeros((N, C, 2 * H, 2 * W), dtype=np.float64)
    for n in range(N):
        for c in range(C):
            for i in range(2 * H):
                for j in range(2 * W):
                    out[n, c, i, j] = float(x[n, c, i // 2, j // 2])
    return out


def naive_matmul_affine(x, w, b):
    """Triple-loop x @ w.T + b."""
    N, D1 = x.shape
    D2 = w.shape[0]
    out = np.zeros((N, D2), dtype=np.float64)
    for n in range(N):
        for o in range(D2):
            acc = float(b[o])
            for d in range(D1):
                acc += float(x[n, d]) * float(w[o, d])
            out[n, o] = acc
    return out


def naive_l1_mean(a, b):
    total = 0.0
    fa = a.reshape(-1)
    fb = b.reshape(-1)
    for i in range(fa.size):
        total += abs(float(fa[i]) - float(fb[i]))
    return total / fa.size


def reference_adam(grads, lr, beta1=0.5, beta2=0.999, eps=1e-8, x0=0.0):
    """Scalar Adam trajectory: returns parameter values after each step."""
    x = x0
    m = v = 0.0
    out = []
    for t, g in enumerate(grads, 1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        mhat = m / (1 - beta1 ** t)
        vhat = v / (1 - beta2 ** t)
        x = x - lr * mhat / (np.sqrt(vhat) + eps)
        out.append(x)
    return out


def naive_nearest_fill_assignment(valid):
    """O(H^2 W^2): for each pixel the row-major-lowest nearest valid index."""
    H, W = valid.shape
    out = np.zeros(H * W, dtype=np.int64)
    for i in range(H):
        for j in range(W):
            if valid[i, j]:
                out[i * W + j] = i * W + j
                continue
            best = None
            best_d2 = None
            for a in range(H):
                for b in range(W):
                    if not valid[a, b]:
                        continue
                    d2 = (a - i) ** 2 + (b - j) ** 2
                    if best_d2 is None or d2 < best_d2:
                        best_d2 = d2
                        best = a * W + b
                    # ties: keep the first (row-major lowest) encountered
            out[i * W + j] = best
    return out


def point_in_triangle(px, py, tri):
    """Barycentric sign test, inclusive with a small epsilon."""
    (x0, y0), (x1, y1), (x2, y2) = tri
    denom = (y1 - y2) * (x0 - x2) + (x2 - x1) * (y0 - y2)
    if abs(denom) < 1e-15:
        return False
    w0 = ((y1 - y2) * (px - x2) + (x2 - x1) * (py - y2)) / denom
    w1 = ((y2 - y0) * (px - x2) + (x0 - x2) * (py - y2)) / denom
    w2 = 1.0 - w0 - w1
    return w0 > 1e-9 and w1 > 1e-9 and w2 > 1e-9


def naive_covariance(Z):
    """Textbook double-loop sample covariance of column observations."""
    nb, n = Z.shape
    mu = [sum(float(Z[i, k]) for k in range(n)) / n for i in range(nb)]
    cov = np.zeros((nb, nb), dtype=np.float64)
    for i in range(nb):
        for j in range(nb):
            acc = 0.0
            for k in range(n):
                acc += (float(Z[i, k]) - mu[i]) * (float(Z[j, k]) - mu[j])
            cov[i, j] = acc / (n - 1)
    return cov


def naive_specificity(generated, test):
    """Double loop over generated x test meshes; per-pair mean vertex
    distance, min over the test set, then mean/std over samples."""
    dists = []
    for g in generated:
        best = None
        for t in test:
            d = float(np.linalg.norm(g - t, axis=1).mean())
            if best is None or d < best:
                best = d
        dists.append(best)
    arr = np.asarray(dists)
    return float(arr.mean()), float(arr.std()), arr
