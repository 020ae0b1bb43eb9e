"""
Conv-attention pre-fusion, forward and backward
===============================================

Three aligned streams are mapped to a shared width, mixed by learned
modality weights, and separately passed through a residual convolution
stack over the modality mean.  The two results are added.
"""

import time

import numpy as np

from emollama import prefusion as pf

rng = np.random.default_rng(1)
cfg = pf.PreFusionConfig(dim=8, tokens=6, n_blocks=2, input_dims=(5, 6, 7))
params = pf.init_params(cfg, rng)
u_a, u_glo, u_temp = (rng.normal(size=(6, d)) for d in cfg.input_dims)

# %% at initialization the attention head is zero, so weights are uniform
out = pf.fuse(u_a, u_glo, u_temp, params)
print("weights at init:", out.weights.round(4))

# give the attention head something to say
params.attn_w2 = rng.normal(size=params.attn_w2.shape)
out = pf.fuse(u_a, u_glo, u_temp, params)
print("learned-ish weights:", out.weights.round(4))
print("u_f shape:", out.u_f.shape)

# %% residual identity: identity stem, zero blocks and uniform logits
ident = params.copy()
ident.stem_w, ident.stem_b = pf.identity_kernel(cfg.dim), np.zeros(cfg.dim)
for w, b in zip(ident.block_w, ident.block_b):
    w[...] = 0
    b[...] = 0
ident.attn_w2[...] = 0
ident.attn_b2[...] = 0
o = pf.fuse(u_a, u_glo, u_temp, ident)
mean = pf.modality_mean(pf.standardize(u_a, u_glo, u_temp, ident).F_s)[0]
print("u_f == 2 * mean:", np.array_equal(o.u_f, 2 * mean))

# %% gradient check against central differences
upstream = rng.normal(size=out.u_f.shape)
grads, input_grads = pf.fuse_backward((u_a, u_glo, u_temp), params, upstream)


def objective():
    return float(np.sum(pf.fuse(u_a, u_glo, u_temp, params).u_f * upstream))


h, worst = 1e-4, 0.0
t0 = time.perf_counter()
named, gnamed = params.named(), grads.named()
for name, arr in named.items():
    for idx in np.ndindex(arr.shape):
        keep = arr[idx]
        arr[idx] = keep + h
        up = objective()
        arr[idx] = keep - h
        down = objective()
        arr[idx] = keep
        num = (up - down) / (2 * h)
        worst = max(worst, abs(num - gnamed[name][idx]) / max(1.0, abs(num)))
print(f"max gradient error {worst:.2e} over {sum(a.size for a in named.values())} entries "
      f"in {time.perf_counter() - t0:.1f}s")
