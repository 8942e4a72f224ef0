"""Independent reference implementations used as test oracles."""

import itertools

import numpy as np

from tristereo import autograd as ag


def relative_error(analytic, numeric, floor=1e-6):
    analytic, numeric = np.asarray(analytic, float), np.asarray(numeric, float)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / scale)) if analytic.size else 0.0


def central_difference(f, x, rel_step=1e-4):
    """d f / d x for scalar f, perturbing x in place; step is relative with a unit floor."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        h = rel_step * max(abs(old), 1.0)
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        g.reshape(-1)[i] = (fp - fm) / (2 * h)
    return g


def check_op_gradient(fn, *inputs, seed=0):
    """Max relative error of every input gradient of sum(w * fn(*inputs))."""
    rng = np.random.default_rng(seed)
    arrays = [np.array(a, dtype=np.float64) for a in inputs]
    probe = fn(*[ag.Var(a) for a in arrays])
    weights = rng.normal(size=np.shape(probe.value))

    def scalar():
        return float(np.sum(weights * fn(*[ag.Var(a) for a in arrays]).value))

    leaves = [ag.Var(a, requires_grad=True) for a in arrays]
    out = fn(*leaves)
    loss = ag.total(out * weights)
    grads = ag.grad(loss, leaves)
    return max(relative_error(g, central_difference(scalar, a)) for g, a in zip(grads, arrays))


def spline_dense(values, x):
    """Natural cubic spline by a dense solve for the knot second derivatives."""
    y = np.asarray(values, dtype=np.float64)
    n = len(y)
    A = np.zeros((n, n))
    rhs = np.zeros(n)
    A[0, 0] = A[-1, -1] = 1.0
    for j in range(1, n - 1):
        A[j, j - 1], A[j, j], A[j, j + 1] = 1.0, 4.0, 1.0
        rhs[j] = 6.0 * (y[j + 1] - 2 * y[j] + y[j - 1])
    M = np.linalg.solve(A, rhs)
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    out = np.empty_like(x)
    for i, q in enumerate(x):
        j = min(int(np.floor(q)), n - 2)
        t = q - j
        # cubic Hermite-free form: linear part plus second-derivative correction
        lin = (1 - t) * y[j] + t * y[j + 1]
        corr = ((1 - t) ** 3 - (1 - t)) * M[j] / 6 + (t ** 3 - t) * M[j + 1] / 6
        out[i] = lin + corr
    return out


def conv3d_direct(x, w, b=None):
    """Zero-padded 3x3x3 cross-correlation by explicit summation; x [Cin, D, H, W]."""
    cin, D, H, W = x.shape
    cout = w.shape[0]
    out = np.zeros((cout, D, H, W))
    for o, d, i, j in itertools.product(range(cout), range(D), range(H), range(W)):
        s = 0.0 if b is None else b[o]
        for c, a, p, q in itertools.product(range(cin), range(3), range(3), range(3)):
            dd, ii, jj = d + a - 1, i + p - 1, j + q - 1
            if 0 <= dd < D and 0 <= ii < H and 0 <= jj < W:
                s += w[o, c, a, p, q] * x[c, dd, ii, jj]
        out[o, d, i, j] = s
    return out


def metrics_loop(gt, valid, est, conjunctive=False):
    es, gs = [], []
    for v, g, e in zip(valid.ravel(), gt.ravel(), est.ravel()):
        if v and g > 0:
            gs.append(float(g))
            es.append(abs(float(g) - float(e)))
    n = len(gs)
    epe = sum(es) / n
    d1 = px1 = re1 = 0
    mre = 0.0
    for e, g in zip(es, gs):
        a, r = e >= 3.0, e >= 0.05 * g
        d1 += (a and r) if conjunctive else (a or r)
        px1 += e >= 1.0
        mre += e / g
        re1 += e / g >= 1.0
    return epe, 100.0 * d1 / n, 100.0 * px1 / n, mre / n, 100.0 * re1 / n, n


def visible_layer(layers, x, y, shift):
    """Index of the front-most layer seen at target pixel (x, y) under shift scale."""
    seen = -1
    for k, layer in enumerate(layers):
        src = x + layer.disparity * shift
        if layer.x0 <= src < layer.x1 and layer.y0 <= y < layer.y1:
            seen = k
    return seen


def occlusion_brute(layers, h, w, shift):
    occ = np.zeros((h, w), bool)
    for y in range(h):
        for x in range(w):
            k = visible_layer(layers, x, y, 0.0)
            if k < 0:
                continue
            u = x - layers[k].disparity * shift
            seen = visible_layer(layers, u, y, shift)
            occ[y, x] = seen != k and seen > k
    return occ
