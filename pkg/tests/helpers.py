"""Independent oracles shared by the tests."""

import math
from collections import deque

import numpy as np

from cassavaseg.nn import Tensor


def point_in_polygon(px, py, verts):
    """Classic ray-casting even-odd test, one point at a time."""
    inside = False
    n = len(verts)
    j = n - 1
    for i in range(n):
        xi, yi = verts[i]
        xj, yj = verts[j]
        if (yi > py) != (yj > py):
            x_cross = (xj - xi) * (py - yi) / (yj - yi) + xi
            if px < x_cross:
                inside = not inside
        j = i
    return inside


def brute_force_polygon_mask(verts, width, height):
    out = np.zeros((height, width), dtype=bool)
    for y in range(height):
        for x in range(width):
            out[y, x] = point_in_polygon(x + 0.5, y + 0.5, verts)
    return out


def random_simple_polygon(rng, width, height, max_vertices=12):
    """Star-shaped (hence simple) polygon: sorted angles around a center, random radii."""
    n = int(rng.integers(3, max_vertices + 1))
    angles = np.sort(rng.uniform(0, 2 * math.pi, size=n))
    while np.unique(angles).size < n:
        angles = np.sort(rng.uniform(0, 2 * math.pi, size=n))
    cx, cy = rng.uniform(0, width), rng.uniform(0, height)
    radii = rng.uniform(0.5, max(2.0, max(width, height) * 0.6), size=n)
    return [(float(cx + r * math.cos(a)), float(cy + r * math.sin(a))) for a, r in zip(angles, radii)]


def flood_fill_labels(binary):
    """4-connected component labelling by breadth-first flood fill."""
    h, w = binary.shape
    labels = np.zeros((h, w), dtype=int)
    current = 0
    for y in range(h):
        for x in range(w):
            if binary[y, x] and labels[y, x] == 0:
                current += 1
                labels[y, x] = current
                queue = deque([(y, x)])
                while queue:
                    cy, cx = queue.popleft()
                    for ny, nx in ((cy - 1, cx), (cy + 1, cx), (cy, cx - 1), (cy, cx + 1)):
                        if 0 <= ny < h and 0 <= nx < w and binary[ny, nx] and labels[ny, nx] == 0:
                            labels[ny, nx] = current
                            queue.append((ny, nx))
    return labels, current


def same_partition(labels_a, labels_b):
    """Two labelings describe the same components, up to renumbering."""
    if ((labels_a == 0) != (labels_b == 0)).any():
        return False
    pairs = set(zip(labels_a[labels_a > 0].tolist(), labels_b[labels_b > 0].tolist()))
    return len(pairs) == len({a for a, _ in pairs}) == len({b for _, b in pairs})


def conv2d_loop(x, w, b, pad):
    n, c, h, wd = x.shape
    f, _, k, _ = w.shape
    xp = np.pad(x.astype(np.float64), ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho, wo = h + 2 * pad - k + 1, wd + 2 * pad - k + 1
    out = np.zeros((n, f, ho, wo))
    for ni in range(n):
        for fi in range(f):
            for y in range(ho):
                for xx in range(wo):
                    out[ni, fi, y, xx] = np.sum(xp[ni, :, y:y + k, xx:xx + k] * w[fi]) + (b[fi] if b is not None else 0)
    return out


def upconv2d_loop(x, w, b=None):
    n, c, h, wd = x.shape
    f = w.shape[1]
    out = np.zeros((n, f, 2 * h, 2 * wd))
    for ni in range(n):
        for ci in range(c):
            for y in range(h):
                for xx in range(wd):
                    for a in range(2):
                        for bb in range(2):
                            out[ni, :, 2 * y + a, 2 * xx + bb] += x[ni, ci, y, xx] * w[ci, :, a, bb]
    if b is not None:
        out += b[None, :, None, None]
    return out


def numeric_grad(fn, arrays, index, h=1e-3):
    """Central finite differences of scalar ``fn(*arrays)`` w.r.t. ``arrays[index]``."""
    base = arrays[index]
    grad = np.zeros(base.shape, dtype=np.float64)
    flat = base.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = fn(*arrays)
        flat[i] = old - h
        down = fn(*arrays)
        flat[i] = old
        grad.reshape(-1)[i] = (up - down) / (2 * h)
    return grad


def rel_error(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def check_op_gradients(op, arrays, seed=0, h=1e-3):
    """Relative errors between analytic and finite-difference gradients of a
    random projection of ``op(*tensors)`` for every input array."""
    rng = np.random.default_rng(seed)
    arrays = [np.array(a, dtype=np.float32) for a in arrays]
    probe = None

    def scalar(*arrs):
        nonlocal probe
        out = op(*[Tensor(a) for a in arrs]).data.astype(np.float64)
        if probe is None:
            probe = rng.normal(size=out.shape)
        return float(np.sum(out * probe))

    scalar(*arrays)
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = op(*tensors)
    out.backward(probe.astype(np.float32))
    errors = []
    for i, t in enumerate(tensors):
        num = numeric_grad(scalar, arrays, i, h)
        errors.append(rel_error(t.grad, num))
    return errors
