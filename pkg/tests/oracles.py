"""Independent reference implementations used as test oracles.

None of these import the package's numerical code; they are written from the
model definitions in plain Python so that agreement is meaningful.
"""

from __future__ import annotations

import math
from fractions import Fraction

# --- dynamics ------------------------------------------------------------------

def tire(mu, B, C, slip, load):
    return mu * load * math.sin(C * math.atan(B * slip))


def wheel_forces_ref(v, beta, psi_dot, m, lf, lr, w, mu, B, C, swa, throttle, brake):
    """Per-wheel (Fx, Fy) in the body frame for wheels fl, fr, rl, rr."""
    throttle = min(max(throttle, 0.0), 1.0)
    brake = min(max(brake, 0.0), 1.0)
    s_long = -0.12 * brake if brake > 0 else 0.12 * throttle
    delta_front = swa / 15.0
    Fz = m * 9.81 / 4.0
    out = []
    for x, y, delta in ((lf, w / 2, delta_front), (lf, -w / 2, delta_front), (-lr, w / 2, 0.0), (-lr, -w / 2, 0.0)):
        # velocity of the wheel contact point in the body frame
        u = v * math.cos(beta) - psi_dot * y
        q = v * math.sin(beta) + psi_dot * x
        alpha = 0.0 if (u == 0.0 and q == 0.0) else delta - math.atan2(q, u)
        fl = tire(mu, B, C, s_long, Fz)
        fs = tire(mu, B, C, alpha, Fz)
        mag = math.sqrt(fl * fl + fs * fs)
        if mag > mu * Fz:
            fl, fs = fl * mu * Fz / mag, fs * mu * Fz / mag
        out.append((fl * math.cos(delta) - fs * math.sin(delta), fl * math.sin(delta) + fs * math.cos(delta)))
    return out


def two_track_rates_ref(v, beta, psi_dot, F, m, Iz, lf, lr, w):
    """(v_dot, beta_dot, psi_ddot) from per-wheel forces ``F[i] = (Fx, Fy)``."""
    (xfl, yfl), (xfr, yfr), (xrl, yrl), (xrr, yrr) = F
    Fx = xfl + xfr + xrl + xrr
    Fy = yfl + yfr + yrl + yrr
    vv = v if v > 0.1 else 0.1
    v_dot = (Fx * math.cos(beta) + Fy * math.sin(beta)) / m
    beta_dot = (Fy * math.cos(beta) - Fx * math.sin(beta)) / (m * vv) - psi_dot
    yaw = (lf * (yfl + yfr) - lr * (yrl + yrr) + (w / 2) * (xfr - xfl) + (w / 2) * (xrr - xrl)) / Iz
    return v_dot, beta_dot, yaw


# --- hypotheses ------------------------------------------------------------------

def triangle_pdf(x, lo, hi):
    if x < lo or x > hi or hi <= lo:
        return 0.0
    if x <= 0:
        return 2 * (x - lo) / ((hi - lo) * (0 - lo)) if lo < 0 else 0.0
    return 2 * (hi - x) / ((hi - lo) * hi) if hi > 0 else 0.0


def axis_points(lo, hi, n):
    """Uniform grid points including both bounds and zero."""
    if hi - lo <= 0 or n == 1:
        return [0.0]
    h = (n - 1) // 2
    if lo < 0 < hi:
        return [lo * (h - k) / h for k in range(h)] + [0.0] + [hi * k / h for k in range(1, h + 1)]
    if hi > 0:
        return [hi * k / (n - 1) for k in range(n)]
    return [lo * (n - 1 - k) / (n - 1) for k in range(n)]


def quadrature_bins(lo, hi, n, m=10_000):
    """Bin probabilities by composite trapezoid integration of the pdf.

    The pdf is piecewise linear with a kink at zero; zero is always made a
    node so the rule is accurate to rounding.
    """
    pts = axis_points(lo, hi, n)
    if len(pts) == 1:
        return pts, [1.0]
    edges = [lo] + [(a + b) / 2 for a, b in zip(pts, pts[1:])] + [hi]
    probs = []
    for a, b in zip(edges, edges[1:]):
        pieces = [(a, 0.0), (0.0, b)] if a < 0 < b else [(a, b)]
        total = 0.0
        for p, q in pieces:
            k = max(m // len(pieces), 1)
            step = (q - p) / k
            s = 0.5 * (triangle_pdf(p, lo, hi) + triangle_pdf(q, lo, hi))
            for j in range(1, k):
                s += triangle_pdf(p + j * step, lo, hi)
            total += s * step
        probs.append(total)
    z = sum(probs)
    return pts, [p / z for p in probs]


# --- grid -----------------------------------------------------------------------

def _canon(ux, uy, tol=1e-9):
    if uy < -tol or (abs(uy) <= tol and ux < 0):
        return -ux, -uy
    return ux, uy


def cell_in_footprint(i, j, pose, footprint, spec, tol=1e-9):
    """Containment of the centre of cell (i, j) in the oriented rectangle."""
    X, Y, psi = pose
    L, W = footprint
    cx = spec.x0 + (i + 0.5) * spec.cell_length
    cy = spec.y0 + (j + 0.5) * spec.cell_width
    own_i = math.floor((X - spec.x0) / spec.cell_length)
    own_j = math.floor((Y - spec.y0) / spec.cell_width)
    if (i, j) == (own_i, own_j):
        return True
    ax, ay = _canon(math.cos(psi), math.sin(psi))
    nx, ny = _canon(-math.sin(psi), math.cos(psi))
    a = (cx - X) * ax + (cy - Y) * ay
    b = (cx - X) * nx + (cy - Y) * ny
    return -L / 2 - tol <= a < L / 2 - tol and -W / 2 - tol <= b < W / 2 - tol


def pog_bruteforce(objects, spec):
    """``objects`` is a list of (poses, weights, footprint); returns nested lists."""
    out = [[0.0] * spec.J for _ in range(spec.I)]
    for i in range(spec.I):
        for j in range(spec.J):
            total = 0.0
            for poses, weights, fp in objects:
                c = 0.0
                for pose, w in zip(poses, weights):
                    if cell_in_footprint(i, j, pose, fp, spec):
                        c += w
                total += c
            out[i][j] = min(1.0, total)
    return out


# --- forest --------------------------------------------------------------------------

def gini_weighted(groups):
    n = sum(sum(g.values()) for g in groups)
    total = Fraction(0)
    for g in groups:
        nc = sum(g.values())
        if nc == 0:
            continue
        total += Fraction(nc, n) * (1 - sum(Fraction(c, nc) ** 2 for c in g.values()))
    return total


def _counts(labels):
    d = {}
    for y in labels:
        d[y] = d.get(y, 0) + 1
    return d


def best_split_exhaustive(X, y, rows):
    """Lowest weighted Gini over every (feature, midpoint); ties: feature, then threshold."""
    best = None
    for f in range(len(X[0])):
        vals = sorted({X[r][f] for r in rows})
        for lo, hi in zip(vals, vals[1:]):
            thr = 0.5 * (lo + hi)
            if not lo <= thr < hi:
                thr = lo
            left = [y[r] for r in rows if X[r][f] <= thr]
            right = [y[r] for r in rows if X[r][f] > thr]
            g = gini_weighted([_counts(left), _counts(right)])
            key = (g, f, thr)
            if best is None or key < best:
                best = key
    return None if best is None else (best[1], best[2])


def cart_reference(X, y, rows=None):
    """Fully grown CART as nested tuples: ("leaf", counts) or ("split", f, thr, left, right)."""
    rows = list(range(len(y))) if rows is None else rows
    counts = _counts(y[r] for r in rows)
    if len(counts) <= 1:
        return ("leaf", counts)
    split = best_split_exhaustive(X, y, rows)
    if split is None:
        return ("leaf", counts)
    f, thr = split
    left = [r for r in rows if X[r][f] <= thr]
    right = [r for r in rows if X[r][f] > thr]
    return ("split", f, thr, cart_reference(X, y, left), cart_reference(X, y, right))


# --- evaluation ----------------------------------------------------------------------

def criticality_bruteforce(ego, other):
    """``ego``/``other``: lists of 2-D nested lists. Returns (per-instance max, total)."""
    per = []
    for e, o in zip(ego, other):
        best = 0.0
        for row_e, row_o in zip(e, o):
            for a, b in zip(row_e, row_o):
                best = max(best, a * b)
        per.append(best)
    return per, max(per)
