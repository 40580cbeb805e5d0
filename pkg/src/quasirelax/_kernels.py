"""Numba kernels for lamination sweeps on grid chains.

Chains are arithmetic progressions of flat grid indices with uniform
spacing, so hull geometry can use integer positions; the chord value at an
interior position t between hull vertices (x0, v0) and (x1, v1) is
``v0 + (v1 - v0) * (t - x0) / (x1 - x0)``, the same formula the brute
oracle uses, which keeps engine and oracle bit-comparable.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def hull_sweep(vals_in, out, idx, offsets):
    """Lower convex hull along every chain; out <- min(out, hull).

    ``idx`` holds flat grid indices grouped into chains delimited by
    ``offsets``; ``vals_in`` is the field the hulls are built from (+inf
    marks missing points), ``out`` accumulates the pointwise minimum.
    """
    n_chain = offsets.shape[0] - 1
    for c in range(n_chain):
        s = offsets[c]
        e = offsets[c + 1]
        n = e - s
        if n < 3:
            continue
        xs = np.empty(n, dtype=np.int64)
        vs = np.empty(n, dtype=np.float64)
        k = 0
        for t in range(n):
            v = vals_in[idx[s + t]]
            if v < np.inf:
                xs[k] = t
                vs[k] = v
                k += 1
        if k < 2:
            continue
        stack = np.empty(k, dtype=np.int64)
        top = 0
        for i in range(k):
            while top >= 2:
                a = stack[top - 2]
                b = stack[top - 1]
                # pop b unless it lies strictly below the chord a -> i
                if (vs[b] - vs[a]) * (xs[i] - xs[a]) >= (vs[i] - vs[a]) * (xs[b] - xs[a]):
                    top -= 1
                else:
                    break
            stack[top] = i
            top += 1
        seg = 0
        for t in range(xs[0], xs[k - 1] + 1):
            while xs[stack[seg + 1]] < t:
                seg += 1
            a = stack[seg]
            b = stack[seg + 1]
            x0 = xs[a]
            x1 = xs[b]
            if t == x0:
                hv = vs[a]
            elif t == x1:
                hv = vs[b]
            else:
                hv = vs[a] + (vs[b] - vs[a]) * (t - x0) / (x1 - x0)
            j = idx[s + t]
            if hv < out[j]:
                out[j] = hv


@njit(cache=True)
def midpoint_violations(vals, idx, offsets, tol, out_pos, out_def):
    """Collect rank-one midpoint convexity violations along chains.

    For every interior triple with finite values, a violation is
    ``v0 > (v_minus + v_plus) / 2 + tol``. Returns the total count; the
    first ``len(out_pos)`` offenders land in the output arrays.
    """
    cap = out_pos.shape[0]
    count = 0
    n_chain = offsets.shape[0] - 1
    for c in range(n_chain):
        s = offsets[c]
        e = offsets[c + 1]
        for t in range(s + 1, e - 1):
            vm = vals[idx[t - 1]]
            v0 = vals[idx[t]]
            vp = vals[idx[t + 1]]
            if vm < np.inf and v0 < np.inf and vp < np.inf:
                deficit = v0 - 0.5 * (vm + vp)
                if deficit > tol:
                    if count < cap:
                        out_pos[count] = idx[t]
                        out_def[count] = deficit
                    count += 1
    return count
