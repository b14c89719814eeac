"""Independent reference implementations used only by the tests.

These deliberately avoid the package's kernels: plain Python loops,
different formulations (segment projection by parametrisation, quadratic
roots for ellipse/segment contact) and no shared helpers.
"""
import math

import numpy as np


def nearest_point_bruteforce(polygons, q):
    """Closest boundary point by clamped projection on every edge (first minimum wins)."""
    best = None
    best_d = math.inf
    for ring in polygons:
        n = len(ring)
        for i in range(n):
            ax, ay = ring[i]
            bx, by = ring[(i + 1) % n]
            dx, dy = bx - ax, by - ay
            L2 = dx * dx + dy * dy
            t = 0.0 if L2 == 0 else ((q[0] - ax) * dx + (q[1] - ay) * dy) / L2
            t = min(1.0, max(0.0, t))
            px, py = ax + t * dx, ay + t * dy
            d = math.hypot(q[0] - px, q[1] - py)
            if d < best_d:
                best_d = d
                best = (px, py)
    return np.array(best), best_d


def point_line_distance(n, anchor, q):
    """Distance from q to the line through anchor with normal n, via the line direction."""
    tx, ty = -n[1], n[0]
    L = math.hypot(tx, ty)
    tx, ty = tx / L, ty / L
    wx, wy = q[0] - anchor[0], q[1] - anchor[1]
    # |w x t|
    return abs(wx * ty - wy * tx)


def _inside_polygon(ring, x, y):
    """Winding number test."""
    wn = 0
    n = len(ring)
    for i in range(n):
        x1, y1 = ring[i]
        x2, y2 = ring[(i + 1) % n]
        cross = (x2 - x1) * (y - y1) - (x - x1) * (y2 - y1)
        if y1 <= y:
            if y2 > y and cross > 0:
                wn += 1
        elif y2 <= y and cross < 0:
            wn -= 1
    return wn != 0


def ellipse_polygon_overlap(center, heading, a, b, ring):
    """Closed ellipse vs closed polygon via edge/ellipse quadratic roots.

    Overlap iff a vertex lies in the ellipse, an edge crosses the ellipse
    boundary, or the centre lies in the polygon.
    """
    c, s = math.cos(heading), math.sin(heading)

    def local(p):
        dx, dy = p[0] - center[0], p[1] - center[1]
        return ((c * dx + s * dy) / a, (-s * dx + c * dy) / b)

    pts = [local(p) for p in ring]
    for x, y in pts:
        if x * x + y * y <= 1.0:
            return True
    n = len(pts)
    for i in range(n):
        x1, y1 = pts[i]
        x2, y2 = pts[(i + 1) % n]
        dx, dy = x2 - x1, y2 - y1
        A = dx * dx + dy * dy
        B = 2 * (x1 * dx + y1 * dy)
        C = x1 * x1 + y1 * y1 - 1.0
        disc = B * B - 4 * A * C
        if A > 0 and disc >= 0:
            sq = math.sqrt(disc)
            for t in ((-B - sq) / (2 * A), (-B + sq) / (2 * A)):
                if 0.0 <= t <= 1.0:
                    return True
    return _inside_polygon(ring, center[0], center[1])


def body_error(desired, actual):
    """Earth-frame difference rotated by -psi, written with an explicit matrix."""
    R = np.array([[math.cos(actual[2]), -math.sin(actual[2])],
                  [math.sin(actual[2]), math.cos(actual[2])]])
    d = R.T @ np.array([desired[0] - actual[0], desired[1] - actual[1]])
    dpsi = math.atan2(math.sin(desired[2] - actual[2]), math.cos(desired[2] - actual[2]))
    return np.array([d[0], d[1], dpsi])


def body_offset(point, pose):
    """Earth-frame point expressed relative to a pose, in that pose's body axes."""
    R = np.array([[math.cos(pose[2]), -math.sin(pose[2])], [math.sin(pose[2]), math.cos(pose[2])]])
    return R.T @ (np.asarray(point) - np.asarray(pose[:2]))


def dense_forward(weights, biases, x, out_act):
    """Network evaluation one neuron at a time."""
    h = list(map(float, x))
    for k, (W, b) in enumerate(zip(weights, biases)):
        nxt = []
        for j in range(W.shape[1]):
            z = b[j] + sum(h[i] * W[i, j] for i in range(W.shape[0]))
            if k < len(weights) - 1:
                nxt.append(math.tanh(z))
            elif out_act == "sigmoid":
                nxt.append(1.0 / (1.0 + math.exp(-z)))
            else:
                nxt.append(z)
        h = nxt
    return np.array(h)


def clopper_pearson_by_bisection(k, n, level=0.95):
    """Exact interval from binomial tail sums, solved by bisection."""
    alpha = 1 - level

    def tail_ge(p):  # P[X >= k]
        return sum(math.comb(n, i) * p ** i * (1 - p) ** (n - i) for i in range(k, n + 1))

    def tail_le(p):  # P[X <= k]
        return sum(math.comb(n, i) * p ** i * (1 - p) ** (n - i) for i in range(0, k + 1))

    def solve(f, target, increasing):
        lo, hi = 0.0, 1.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if (f(mid) < target) == increasing:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    low = 0.0 if k == 0 else solve(tail_ge, alpha / 2, True)
    high = 1.0 if k == n else solve(tail_le, alpha / 2, False)
    return low, high
