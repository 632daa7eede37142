"""Numpy fallback implementations of the hot kernels.

Same contracts as the compiled versions in ``_cy_impl``:

- ``causal_conv(f, x)``: y[i] = sum_k f[k] * x[i-k], output length len(x).
- ``ar_drive(h, d)``: y[i] = d[i] + sum_k h[k] * y[i-1-k], entries with
  negative index read as zero.
- ``ar_drive_batch(h, D)``: ``ar_drive`` applied to every row of D.

Accumulation order (ascending k, one term at a time) mirrors the compiled
loops, so both backends produce bitwise-identical outputs and the batch
routine is bitwise-identical to stacked single calls.
"""

import numpy as np


def causal_conv(f, x):
    f = np.ascontiguousarray(f, dtype=np.float64)
    x = np.ascontiguousarray(x, dtype=np.float64)
    n = x.shape[0]
    out = np.zeros(n)
    for k in range(min(f.shape[0], n)):
        out[k:] += f[k] * x[: n - k]
    return out


def ar_drive(h, drive):
    h = np.ascontiguousarray(h, dtype=np.float64)
    d = np.ascontiguousarray(drive, dtype=np.float64)
    n = d.shape[0]
    q = h.shape[0]
    if q == 0 or n == 0:
        return d.copy()
    # buf[q + i] holds y[i]; the q-zero prefix stands in for y at negative times
    buf = np.zeros(q + n)
    hl = h.tolist()
    bl = buf.tolist()
    dl = d.tolist()
    for i in range(n):
        acc = dl[i]
        base = q + i - 1
        for k in range(q):
            acc += hl[k] * bl[base - k]
        bl[q + i] = acc
    return np.asarray(bl[q:])


def ar_drive_batch(h, drives):
    h = np.ascontiguousarray(h, dtype=np.float64)
    D = np.ascontiguousarray(drives, dtype=np.float64)
    if D.ndim != 2:
        raise ValueError("drives must be 2-D (n_rollouts, n_steps)")
    n, m = D.shape
    q = h.shape[0]
    if q == 0 or m == 0 or n == 0:
        return D.copy()
    buf = np.zeros((n, q + m))
    for t in range(m):
        acc = D[:, t].copy()
        base = q + t - 1
        for k in range(q):
            acc += h[k] * buf[:, base - k]
        buf[:, q + t] = acc
    return buf[:, q:]
