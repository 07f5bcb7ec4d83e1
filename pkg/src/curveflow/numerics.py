"""Shared numerical kernels: high-order stencils, quadrature, small infrastructure.

Everything here is geometry-agnostic.  Stencils use 7-point windows (order 6 on
uniform grids, >= 5 on quasi-uniform ones) because the near-tip curvature
formulas lose several digits to cancellation and 5-point windows are not enough
for the advertised tolerances.
"""

from __future__ import annotations

import json
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor

import numpy as np

STENCIL_NPTS = 7

# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------


def fornberg_weights(x0, x, maxorder):
    """Weights for derivatives 0..maxorder at x0 from samples at nodes x.

    Classic Fornberg recursion; exact for polynomials of degree < len(x).
    Returns an array of shape (maxorder+1, len(x)).
    """
    x = np.asarray(x, dtype=float)
    n = len(x)
    c = np.zeros((maxorder + 1, n))
    c1 = 1.0
    c4 = x[0] - x0
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, maxorder)
        c2 = 1.0
        c5 = c4
        c4 = x[i] - x0
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[k, i] = c1 * (k * c[k - 1, i - 1] - c5 * c[k, i - 1]) / c2
                c[0, i] = -c1 * c5 * c[0, i - 1] / c2
            for k in range(mn, 0, -1):
                c[k, j] = (c4 * c[k, j] - k * c[k - 1, j]) / c3
            c[0, j] = c4 * c[0, j] / c3
        c1 = c2
    return c


class DerivOp:
    """Precomputed 1st/2nd-derivative stencils on a grid with optional parity ghosts.

    parity is a (left, right) pair, each one of None / 'odd' / 'even'.  A parity
    entry reflects the grid across that endpoint and extends sampled values with
    the matching symmetry (odd pivots on the endpoint value), which is how tip
    regularity of rotationally symmetric data enters the stencils.  None uses
    one-sided windows at that end.

    bias shifts every window by that many nodes (negative = window reaches
    further left).  A one-node bias keeps the formal order but makes the first
    derivative dissipative rather than purely dispersive, which is what an
    advection term needs for its upwind side.
    """

    def __init__(self, s, parity=(None, None), npts=STENCIL_NPTS, bias=0):
        s = np.asarray(s, dtype=float)
        n = len(s)
        if n < npts:
            raise ValueError(f"need at least {npts} nodes, got {n}")
        g = npts // 2
        self.n = n
        self.npts = npts
        self._left = parity[0]
        self._right = parity[1]
        self._g = g

        parts = [s]
        if self._left:
            parts.insert(0, 2.0 * s[0] - s[g:0:-1])
        if self._right:
            parts.append(2.0 * s[-1] - s[-2 : -2 - g : -1])
        s_ext = np.concatenate(parts)
        n_ext = len(s_ext)
        offset = g if self._left else 0

        idx = np.empty((n, npts), dtype=np.intp)
        w1 = np.empty((n, npts))
        w2 = np.empty((n, npts))
        for i in range(n):
            start = min(max(i + offset - g + bias, 0), n_ext - npts)
            window = np.arange(start, start + npts)
            weights = fornberg_weights(s[i], s_ext[window], 2)
            idx[i] = window
            w1[i] = weights[1]
            w2[i] = weights[2]
        self._idx = idx
        self._w1 = w1
        self._w2 = w2

    def _extend(self, y):
        y = np.asarray(y, dtype=float)
        if len(y) != self.n:
            raise ValueError(f"expected {self.n} samples, got {len(y)}")
        g = self._g
        parts = [y]
        if self._left:
            mirror = y[g:0:-1]
            parts.insert(0, 2.0 * y[0] - mirror if self._left == "odd" else mirror)
        if self._right:
            mirror = y[-2 : -2 - g : -1]
            parts.append(2.0 * y[-1] - mirror if self._right == "odd" else mirror)
        return np.concatenate(parts)

    def d1(self, y):
        """First derivative at every grid node."""
        vals = self._extend(y)[self._idx]
        return np.einsum("ij,ij->i", self._w1, vals)

    def d2(self, y):
        """Second derivative at every grid node."""
        vals = self._extend(y)[self._idx]
        return np.einsum("ij,ij->i", self._w2, vals)


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------


def cumulative_integral(y, s, npts=STENCIL_NPTS):
    """Cumulative integral of samples y over grid s, node by node.

    Each interval is integrated with the degree-(npts-1) interpolant through a
    window of npts surrounding nodes, so the rule is exact for polynomials of
    degree npts-1 and keeps ball-volume ratios meaningful down to tiny radii
    where composite Simpson already loses digits.
    Returns an array F with F[0] = 0 and F[j] = integral from s[0] to s[j].
    """
    s = np.asarray(s, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(s)
    if n < npts:
        raise ValueError(f"need at least {npts} nodes, got {n}")
    half = npts // 2
    starts = np.clip(np.arange(n - 1) - (half - 1), 0, n - npts)
    windows = starts[:, None] + np.arange(npts)[None, :]

    # Local monomial basis about the interval's left node, scaled by the window
    # span for conditioning: weights u solve V^T u = m with V[a,b] = t_b^a and
    # m_a the monomial moments over the interval.
    t = s[windows] - s[:-1, None]
    span = s[windows[:, -1]] - s[windows[:, 0]]
    tau = t / span[:, None]
    powers = np.arange(npts)
    vand = tau[:, None, :] ** powers[None, :, None]  # (n-1, npts, npts)
    dlt = (s[1:] - s[:-1]) / span
    moments = span[:, None] * dlt[:, None] ** (powers[None, :] + 1) / (powers[None, :] + 1)
    u = np.linalg.solve(vand, moments[:, :, None])[:, :, 0]
    piece = np.einsum("ij,ij->i", u, y[windows])
    out = np.empty(n)
    out[0] = 0.0
    np.cumsum(piece, out=out[1:])
    return out


def integral_to(y, s, r, npts=STENCIL_NPTS):
    """Integral of sampled y from s[0] to an off-node point r (same rule as above)."""
    s = np.asarray(s, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(s)
    if not s[0] <= r <= s[-1]:
        raise ValueError(f"point {r} outside [{s[0]}, {s[-1]}]")
    j = int(np.searchsorted(s, r, side="right") - 1)
    j = min(j, n - 2)
    base = cumulative_integral(y, s, npts=npts)[j]
    if r == s[j]:
        return base
    half = npts // 2
    start = int(np.clip(j - (half - 1), 0, n - npts))
    window = np.arange(start, start + npts)
    t = s[window] - s[j]
    span = s[window[-1]] - s[window[0]]
    tau = t / span
    powers = np.arange(npts)
    vand = tau[None, :] ** powers[:, None]
    dlt = (r - s[j]) / span
    moments = span * dlt ** (powers + 1) / (powers + 1)
    u = np.linalg.solve(vand, moments)
    return base + float(u @ y[window])


def gauss_legendre_integral(f, a, b, npts=8):
    """Integral of callable f over [a, b] by fixed-order Gauss-Legendre."""
    nodes, weights = np.polynomial.legendre.leggauss(npts)
    mid = 0.5 * (a + b)
    rad = 0.5 * (b - a)
    return rad * np.sum(weights * f(mid + rad * nodes))


# ---------------------------------------------------------------------------
# blends
# ---------------------------------------------------------------------------


def smoothstep7(tau):
    """C^3 monotone ramp on [0, 1]: 0 -> 1 with three vanishing derivatives at both ends.

    B(tau) = 35 tau^4 - 84 tau^5 + 70 tau^6 - 20 tau^7, B'(tau) = 140 tau^3 (1-tau)^3 >= 0.
    """
    tau = np.clip(np.asarray(tau, dtype=float), 0.0, 1.0)
    return tau**4 * (35.0 + tau * (-84.0 + tau * (70.0 - 20.0 * tau)))


def smoothstep7_d1(tau):
    """Derivative of :func:`smoothstep7` (zero outside [0, 1])."""
    tau = np.asarray(tau, dtype=float)
    inside = (tau > 0.0) & (tau < 1.0)
    t = np.clip(tau, 0.0, 1.0)
    return np.where(inside, 140.0 * t**3 * (1.0 - t) ** 3, 0.0)


# ---------------------------------------------------------------------------
# infrastructure
# ---------------------------------------------------------------------------


def thread_count():
    """Worker count for embarrassingly parallel sweeps (CURVEFLOW_THREADS, default 1)."""
    raw = os.environ.get("CURVEFLOW_THREADS", "1")
    try:
        count = int(raw)
    except ValueError:
        count = 1
    return max(1, count)


def parallel_map(fn, items):
    """Map fn over items, in order, using at most thread_count() threads.

    Results are reduced in index order so the output is independent of
    scheduling; with one thread this is a plain list comprehension.
    """
    items = list(items)
    workers = thread_count()
    if workers == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def as_readonly(arr):
    """Return a float array copy with the writeable flag cleared."""
    out = np.array(arr, dtype=float)
    out.setflags(write=False)
    return out


def format_float(x):
    """Shortest round-trip decimal form of a float (repr semantics)."""
    return repr(float(x))


def json_ready(obj):
    """Recursively convert numpy scalars/arrays so json.dumps round-trips exactly."""
    if isinstance(obj, dict):
        return {key: json_ready(obj[key]) for key in obj}
    if isinstance(obj, (list, tuple)):
        return [json_ready(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [json_ready(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)) and not isinstance(obj, bool):
        return int(obj)
    return obj


def atomic_write_text(path, text):
    """Write text to path atomically (temp file + rename in the same directory)."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "w", newline="") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_json(path, obj):
    """Serialize obj deterministically (insertion-ordered keys, repr floats) to path."""
    text = json.dumps(json_ready(obj), indent=2, allow_nan=False)
    atomic_write_text(path, text + "\n")


def write_csv(path, header, columns):
    """Write named float columns as CSV with repr-format cells, atomically."""
    columns = [np.asarray(col, dtype=float) for col in columns]
    lines = [",".join(header)]
    for row in zip(*columns):
        lines.append(",".join(format_float(v) for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")
