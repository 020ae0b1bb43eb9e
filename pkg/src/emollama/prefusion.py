"""Conv-Attention pre-fusion of the audio, global-visual and temporal-visual streams.

Each stream is standardized by its own affine map to ``[B, T, d]``.  The
attention branch weights the modality slices by a softmax over a small MLP
applied to the token-mean of the concatenated streams; the convolution
branch runs a ``same``-padded stem followed by residual swish blocks over
the modality mean.  The fused output is the sum of both branches.

Everything here is float64 numpy with a hand-written reverse pass
(:func:`fuse_backward`) so the module can be trained from any autodiff
front end that accepts a custom vector-Jacobian product.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

MODALITIES = ("audio", "global", "temporal")
M = len(MODALITIES)


@dataclass(frozen=True)
class PreFusionConfig:
    dim: int = 64
    tokens: int = 64
    n_blocks: int = 3
    kernel_size: int = 3
    input_dims: tuple[int, int, int] = (32, 32, 32)

    def __post_init__(self):
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd and positive")
        if self.n_blocks < 1:
            raise ValueError("n_blocks must be >= 1")
        if self.dim < 1 or self.tokens < 1:
            raise ValueError("dim and tokens must be >= 1")
        if len(self.input_dims) != M:
            raise ValueError(f"need {M} modality input dims")


@dataclass
class PreFusionParams:
    """Learnable tensors.  Affine weights are stored ``[in, out]``; conv
    kernels ``[out_channels, in_channels, kernel]``."""

    mlp_w: list[np.ndarray]
    mlp_b: list[np.ndarray]
    attn_w1: np.ndarray
    attn_b1: np.ndarray
    attn_w2: np.ndarray
    attn_b2: np.ndarray
    stem_w: np.ndarray
    stem_b: np.ndarray
    block_w: list[np.ndarray] = field(default_factory=list)
    block_b: list[np.ndarray] = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.attn_w1.shape[0]

    @property
    def kernel_size(self) -> int:
        return self.stem_w.shape[2]

    def named(self) -> dict[str, np.ndarray]:
        """Name -> array view, in a fixed order; editing a view edits the params."""
        out = {}
        for name, w, b in zip(MODALITIES, self.mlp_w, self.mlp_b):
            out[f"prefusion.mlp.{name}.weight"] = w
            out[f"prefusion.mlp.{name}.bias"] = b
        out["prefusion.attn.w1"] = self.attn_w1
        out["prefusion.attn.b1"] = self.attn_b1
        out["prefusion.attn.w2"] = self.attn_w2
        out["prefusion.attn.b2"] = self.attn_b2
        out["prefusion.conv_stem.weight"] = self.stem_w
        out["prefusion.conv_stem.bias"] = self.stem_b
        for k, (w, b) in enumerate(zip(self.block_w, self.block_b)):
            out[f"prefusion.conv_block.{k}.weight"] = w
            out[f"prefusion.conv_block.{k}.bias"] = b
        return out

    @classmethod
    def from_named(cls, tensors: dict[str, np.ndarray]) -> "PreFusionParams":
        t = {k: np.array(v, dtype=np.float64) for k, v in tensors.items()
             if k.startswith("prefusion.")}
        n_blocks = sum(1 for k in t if k.startswith("prefusion.conv_block.") and k.endswith(".weight"))
        try:
            params = cls(
                mlp_w=[t[f"prefusion.mlp.{m}.weight"] for m in MODALITIES],
                mlp_b=[t[f"prefusion.mlp.{m}.bias"] for m in MODALITIES],
                attn_w1=t["prefusion.attn.w1"],
                attn_b1=t["prefusion.attn.b1"],
                attn_w2=t["prefusion.attn.w2"],
                attn_b2=t["prefusion.attn.b2"],
                stem_w=t["prefusion.conv_stem.weight"],
                stem_b=t["prefusion.conv_stem.bias"],
                block_w=[t[f"prefusion.conv_block.{k}.weight"] for k in range(n_blocks)],
                block_b=[t[f"prefusion.conv_block.{k}.bias"] for k in range(n_blocks)],
            )
        except KeyError as exc:
            raise ValueError(f"missing prefusion tensor {exc.args[0]}") from None
        params.validate()
        return params

    def validate(self) -> None:
        d = self.dim
        for w, b in zip(self.mlp_w, self.mlp_b):
            if w.ndim != 2 or w.shape[1] != d or b.shape != (d,):
                raise ValueError("modality MLP shape mismatch")
        if self.attn_w2.shape != (d, M) or self.attn_b2.shape != (M,):
            raise ValueError("attention MLP must output one logit per modality")
        for w in [self.stem_w, *self.block_w]:
            if w.shape != (d, d, self.kernel_size):
                raise ValueError("conv kernel shape mismatch")
        for name, x in self.named().items():
            if not np.all(np.isfinite(x)):
                raise ValueError(f"{name}: non-finite parameter")

    def copy(self) -> "PreFusionParams":
        return PreFusionParams.from_named({k: v.copy() for k, v in self.named().items()})

    def zeros_like(self) -> "PreFusionParams":
        return PreFusionParams.from_named({k: np.zeros_like(v) for k, v in self.named().items()})


def init_params(cfg: PreFusionConfig, rng: np.random.Generator) -> PreFusionParams:
    d, k = cfg.dim, cfg.kernel_size

    def uniform(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    return PreFusionParams(
        mlp_w=[uniform((n, d), n) for n in cfg.input_dims],
        mlp_b=[uniform((d,), n) for n in cfg.input_dims],
        attn_w1=uniform((d, d), d),
        attn_b1=uniform((d,), d),
        # zero final layer: training starts from uniform modality weights
        attn_w2=np.zeros((d, M)),
        attn_b2=np.zeros(M),
        stem_w=uniform((d, d, k), d * k),
        stem_b=uniform((d,), d * k),
        block_w=[uniform((d, d, k), d * k) for _ in range(cfg.n_blocks)],
        block_b=[uniform((d,), d * k) for _ in range(cfg.n_blocks)],
    )


def identity_kernel(dim: int, kernel_size: int = 3) -> np.ndarray:
    w = np.zeros((dim, dim, kernel_size))
    w[:, :, kernel_size // 2] = np.eye(dim)
    return w


# -- building blocks ------------------------------------------------------


@dataclass
class HybridStructures:
    F_d: np.ndarray  # [B, M*T, d]
    F_s: np.ndarray  # [B, M, T, d]


@dataclass
class FusionOutput:
    F_attn: np.ndarray
    F_conv: np.ndarray
    u_f: np.ndarray
    weights: np.ndarray  # [B, M]


def _batched(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        return x[None]
    if x.ndim != 3:
        raise ValueError(f"expected [T, d] or [B, T, d] stream, got shape {x.shape}")
    return x


def modality_mix(weights: np.ndarray, F_s: np.ndarray) -> np.ndarray:
    """[B, M] weights x [B, M, T, d] slices -> [B, T, d] via one matrix product."""
    b, m, t, d = F_s.shape
    return (weights[:, None, :] @ F_s.reshape(b, m, t * d)).reshape(b, t, d)


def modality_mean(F_s: np.ndarray) -> np.ndarray:
    return modality_mix(np.full(F_s.shape[:2], 1.0 / F_s.shape[1]), F_s)


def standardize(u_a, u_glo, u_temp, params: PreFusionParams) -> HybridStructures:
    streams = [_batched(u) for u in (u_a, u_glo, u_temp)]
    if len({s.shape[:2] for s in streams}) != 1:
        raise ValueError("unaligned streams")
    mapped = []
    for s, w, b in zip(streams, params.mlp_w, params.mlp_b):
        if s.shape[2] != w.shape[0]:
            raise ValueError(f"stream dim {s.shape[2]} does not match MLP input {w.shape[0]}")
        mapped.append(s @ w + b)
    return HybridStructures(F_d=np.concatenate(mapped, axis=1), F_s=np.stack(mapped, axis=1))


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def attention_weights(h: HybridStructures, params: PreFusionParams) -> np.ndarray:
    pooled = h.F_d.mean(axis=1)
    with np.errstate(all="ignore"):
        hidden = np.tanh(pooled @ params.attn_w1 + params.attn_b1)
        w = softmax(hidden @ params.attn_w2 + params.attn_b2)
    if not np.all(np.isfinite(w)):
        raise FloatingPointError("attention overflow")
    return w


def attention_branch(h: HybridStructures, params: PreFusionParams, weights=None) -> np.ndarray:
    """``weights`` overrides the learned modality weights (shape [B, M] or [M])."""
    if weights is None:
        weights = attention_weights(h, params)
    weights = np.broadcast_to(np.asarray(weights, dtype=np.float64), h.F_s.shape[:2])
    return modality_mix(np.ascontiguousarray(weights), h.F_s)


def _windows(x: np.ndarray, k: int) -> np.ndarray:
    """[B, T, D] -> [B*T, D*k] zero-padded sliding windows (channel-major)."""
    b, t, d = x.shape
    pad = k // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(xp, k, axis=1)  # [B, T, D, k]
    return win.reshape(b * t, d * k)


def conv1d(x: np.ndarray, w: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Stride-1 ``same`` convolution over the token axis of [B, T, D]."""
    b, t, _ = x.shape
    out = _windows(x, w.shape[2]) @ w.reshape(w.shape[0], -1).T + bias
    return out.reshape(b, t, w.shape[0])


def _conv1d_backward(x, w, g):
    b, t, d = x.shape
    k = w.shape[2]
    pad = k // 2
    g2 = g.reshape(b * t, -1)
    dw = (g2.T @ _windows(x, k)).reshape(w.shape)
    dbias = g2.sum(axis=0)
    dwin = (g2 @ w.reshape(w.shape[0], -1)).reshape(b, t, d, k)
    dxp = np.zeros((b, t + 2 * pad, d))
    for j in range(k):
        dxp[:, j:j + t] += dwin[..., j]
    return dxp[:, pad:pad + t], dw, dbias


def swish(x: np.ndarray) -> np.ndarray:
    return x * expit(x)


def conv_branch(h: HybridStructures, params: PreFusionParams) -> np.ndarray:
    return _conv_forward(h.F_s, params)[-1]


def _conv_forward(F_s, params):
    """All intermediate states: [F_conv^0, stem out, (y_k, F_conv^k) ...]."""
    c = modality_mean(F_s)
    trace = [c]
    c = conv1d(c, params.stem_w, params.stem_b)
    trace.append(c)
    for w, b in zip(params.block_w, params.block_b):
        y = conv1d(c, w, b)
        c = c + swish(y)
        trace += [y, c]
    return trace


def fuse(u_a, u_glo, u_temp, params: PreFusionParams) -> FusionOutput:
    """Run both branches and add them.  2-D inputs give 2-D outputs."""
    squeeze = np.ndim(u_a) == 2
    h = standardize(u_a, u_glo, u_temp, params)
    w = attention_weights(h, params)
    F_attn = attention_branch(h, params, w)
    F_conv = conv_branch(h, params)
    out = FusionOutput(F_attn=F_attn, F_conv=F_conv, u_f=F_conv + F_attn, weights=w)
    if squeeze:
        out = FusionOutput(out.F_attn[0], out.F_conv[0], out.u_f[0], out.weights[0])
    return out


def fuse_backward(inputs, params: PreFusionParams, upstream):
    """Reverse-mode gradients of ``sum(upstream * u_f)``.

    Returns ``(param_grads, input_grads)`` where ``param_grads`` is a
    :class:`PreFusionParams` of gradients and ``input_grads`` a tuple of
    arrays shaped like the three inputs.
    """
    squeeze = np.ndim(inputs[0]) == 2
    streams = [_batched(u) for u in inputs]
    g = _batched(upstream)
    h = standardize(*streams, params)
    b, m, t, d = h.F_s.shape
    if g.shape != (b, t, d):
        raise ValueError(f"upstream gradient shape {g.shape} does not match output {(b, t, d)}")

    grads = params.zeros_like()
    dF_s = np.zeros_like(h.F_s)

    # attention branch
    pooled = h.F_d.mean(axis=1)
    hidden = np.tanh(pooled @ params.attn_w1 + params.attn_b1)
    w = softmax(hidden @ params.attn_w2 + params.attn_b2)
    dF_s += w[:, :, None, None] * g[:, None]
    dw = np.einsum("btd,bmtd->bm", g, h.F_s)
    dz = w * (dw - (w * dw).sum(axis=1, keepdims=True))
    grads.attn_w2[...] = hidden.T @ dz
    grads.attn_b2[...] = dz.sum(axis=0)
    da = (dz @ params.attn_w2.T) * (1.0 - hidden**2)
    grads.attn_w1[...] = pooled.T @ da
    grads.attn_b1[...] = da.sum(axis=0)
    dpooled = da @ params.attn_w1.T
    dF_s += dpooled[:, None, None, :] / (m * t)

    # convolution branch, walked backwards through the recorded states
    trace = _conv_forward(h.F_s, params)
    dc = g
    for k in reversed(range(len(params.block_w))):
        c_prev, y = trace[2 * k + 1], trace[2 * k + 2]
        s = expit(y)
        dy = dc * (s * (1.0 + y * (1.0 - s)))
        dx, grads.block_w[k][...], grads.block_b[k][...] = _conv1d_backward(c_prev, params.block_w[k], dy)
        dc = dc + dx
    dc0, grads.stem_w[...], grads.stem_b[...] = _conv1d_backward(trace[0], params.stem_w, dc)
    dF_s += dc0[:, None] / m

    input_grads = []
    for i, s_in in enumerate(streams):
        gx = dF_s[:, i]
        grads.mlp_w[i][...] = s_in.reshape(-1, s_in.shape[2]).T @ gx.reshape(-1, d)
        grads.mlp_b[i][...] = gx.sum(axis=(0, 1))
        dx = gx @ params.mlp_w[i].T
        input_grads.append(dx[0] if squeeze else dx)
    return grads, tuple(input_grads)
