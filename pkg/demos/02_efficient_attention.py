"""The linear-complexity attention used by every layer of the denoiser.

Softmax-normalizing Q per row and K per column lets attention factor as
rho_q(Q) @ (rho_k(K)^T @ V): the n x n score matrix never exists, so cost
and memory grow linearly in sequence length.
"""

import time

import numpy as np

from facemotion import efficient_attention


def naive(q, k, v):
    def softmax(a, axis):
        e = np.exp(a - a.max(axis=axis, keepdims=True))
        return e / e.sum(axis=axis, keepdims=True)

    return softmax(q, 1) @ softmax(k, 0).T @ v


rng = np.random.default_rng(0)
q, k, v = (rng.standard_normal((8, 4)) for _ in range(3))
fast = efficient_attention(q, k, v)
slow = naive(q, k, v)
print("max |fast - naive| on an 8x4 instance:", np.abs(fast - slow).max())

print("\nscaling with sequence length (d_k = d_v = 64):")
for n in (256, 1024, 4096, 16384):
    q, k, v = (rng.standard_normal((n, 64)) for _ in range(3))
    t0 = time.perf_counter()
    efficient_attention(q, k, v)
    dt = time.perf_counter() - t0
    print(f"  n={n:6d}  {dt * 1e3:8.2f} ms  (intermediate is d_k x d_v,"
          f" never n x n)")
