"""
Turning variable-length clips into fixed token grids
====================================================

Audio of any length is average-pooled to 64 tokens, video is sampled to 16
frames and each frame is pooled to a 2x2 grid, and the global frame's class
token is repeated to line up with the other two streams.
"""

import numpy as np

from emollama import tokens

rng = np.random.default_rng(0)

# %% adaptive pooling windows overlap when the length does not divide evenly
print(tokens.pool_windows(10, 4))

seq = np.arange(10, dtype=float)[:, None]
print(tokens.adaptive_pool_1d(seq, 4).ravel())

# shorter than the target: the tail is zero padded
print(tokens.adaptive_pool_1d(np.array([[1.0], [2.0]]), 4).ravel())

# %% frame sampling spreads k picks over n frames, end points included
for n in (31, 16, 5, 1):
    print(n, tokens.sample_frames(n, 16 if n > 1 else 4))

# %% spatial pooling averages each grid cell
frame = np.arange(1, 17, dtype=float).reshape(4, 4, 1)
print(tokens.spatial_pool(frame, 2).ravel())

# %% a whole clip
cfg = tokens.PipelineConfig()
audio = rng.normal(size=(137, 32))
video = rng.normal(size=(23, 4, 4, 32))
global_frame = rng.normal(size=(1 + 16, 32))
clip = tokens.normalize_clip(audio, video, global_frame, cfg)
for name in ("audio", "global_ctx", "temporal", "image"):
    print(f"{name:10s} {getattr(clip, name).shape}")

# the three streams entering pre-fusion share a token count
assert clip.audio.shape[0] == clip.global_ctx.shape[0] == clip.temporal.shape[0]
