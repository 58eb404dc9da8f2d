"""
Perturbing feature statistics
=============================

The DSU layer replaces each instance's per-channel mean and standard
deviation with a draw from a Gaussian centred on them, whose spread is the
variation of those statistics across the batch. Here we watch that happen
on a toy batch.
"""

import numpy as np

from afnet.dsu import DSU, DsuConfig, instance_stats

rng = np.random.default_rng(0)

# Four instances, two channels. Channel 0 varies in offset between
# instances, channel 1 in scale.
x = rng.standard_normal((4, 2, 500))
x[:, 0] += np.array([-2.0, -1.0, 1.0, 2.0])[:, None]
x[:, 1] *= np.array([0.5, 1.0, 1.5, 2.0])[:, None]

mu, sigma = instance_stats(x)
print("per-instance mean (rows: instances, cols: channels)")
print(np.round(mu[:, :, 0], 3))
print("batch spread of the mean:", np.round(mu.std(axis=0).ravel(), 3))
print("batch spread of the std: ", np.round(sigma.std(axis=0).ravel(), 3))

# %%
# Monte-Carlo view
# ----------------
# With the gate always open, the output mean of instance 0 scatters around
# its input mean with the batch spread as standard deviation.

layer = DSU(DsuConfig(apply_prob=1.0), rng=np.random.default_rng(1))
draws = np.array([layer.forward(x).mean(axis=2)[0] for _ in range(5000)])
print("\ninstance 0 output mean over 5000 draws")
print("  average:", np.round(draws.mean(axis=0), 3), " input:", np.round(mu[0, :, 0], 3))
print("  std:    ", np.round(draws.std(axis=0), 3), " batch spread:", np.round(mu.std(axis=0).ravel(), 3))

# %%
# Training versus inference
# -------------------------
# With the default gate of 0.5 roughly half the calls perturb; in eval mode
# the layer is the identity.

layer = DSU(DsuConfig(), rng=np.random.default_rng(2))
applied = 0
for _ in range(1000):
    layer.forward(x)
    applied += layer.last_draw.applied
print(f"\ngate opened on {applied} of 1000 training calls")
print("eval mode returns its input:", layer.eval().forward(x) is x)
