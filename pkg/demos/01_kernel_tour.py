"""Tour of the SSD kernel: the masked-attention view and the chunked view agree.

Run:  python3 demos/01_kernel_tour.py
"""

import numpy as np

from timessd import ssd
from timessd.autodiff import Tensor, no_grad

rng = np.random.default_rng(0)
T, H, P, N = 12, 2, 3, 4

# per-step decay factors live in the log domain, one row per head
log_decay = -rng.exponential(0.4, (H, T))
decay = ssd.DecaySequence(Tensor(log_decay))

# the mask is lower-triangular with a unit diagonal; entry (i, j) is the
# product of the decay factors a_{j+1} ... a_i
L = ssd.build_mask(decay).data[0]
print("mask for head 0 (top-left 5x5):")
print(np.round(L[:5, :5], 4))
i, j = 4, 1
print(f"L[{i},{j}] = {L[i, j]:.6f}, explicit product = {np.exp(log_decay[0, j + 1:i + 1].sum()):.6f}")

X = rng.normal(size=(T, H * P))
B = rng.normal(size=(T, N))
C = rng.normal(size=(T, N))
with no_grad():
    ref = ssd.naive_ssd_forward(X, B, C, ssd.build_mask(decay)).data
    for chunk in (1, 3, 5, 12):
        out = ssd.chunked_ssd_forward(X, B, C, decay, ssd.KernelConfig(H, P, N, chunk))[0].data
        print(f"chunk {chunk:>2}: max |chunked - naive| = {np.abs(out - ref).max():.2e}")

# time deltas only rescale the step sizes, so D = 1 reproduces the plain kernel bit for bit
delta, A = rng.uniform(0.05, 0.5, T), -rng.uniform(1, 3, H)
cfg = ssd.KernelConfig(H, P, N, 4)
with no_grad():
    plain = ssd.ssd_apply(X, B, C, delta, A, cfg).data
    timed = ssd.tissd_apply(X, B, C, delta, np.ones(T), A, cfg).data
    gapped = ssd.tissd_apply(X, B, C, delta, rng.uniform(0.2, 3.0, T), A, cfg).data
print("D = 1 identical to plain SSD:", np.array_equal(plain, timed))
print(f"random D moves the output by {np.abs(gapped - plain).max():.3f}")
