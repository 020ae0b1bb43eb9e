import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emollama import tokens as tk


def brute_windows(L, T):
    out = []
    for i in range(T):
        start = (i * L) // T
        end = -((-(i + 1) * L) // T)
        out.append((start, end))
    return out


def test_pool_identity():
    x = np.random.default_rng(0).normal(size=(64, 5))
    assert np.array_equal(tk.adaptive_pool_1d(x, 64), x)


def test_pool_halving():
    x = np.random.default_rng(1).normal(size=(128, 3))
    expect = (x[0::2] + x[1::2]) / 2
    np.testing.assert_allclose(tk.adaptive_pool_1d(x, 64), expect, rtol=0, atol=1e-15)


def test_pool_zero_padding():
    out = tk.adaptive_pool_1d(np.array([[1.0], [2.0]]), 4)
    assert out.tolist() == [[1.0], [2.0], [0.0], [0.0]]


def test_pool_empty_raises():
    with pytest.raises(ValueError, match="empty"):
        tk.adaptive_pool_1d(np.zeros((0, 2)), 3)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 300), st.integers(1, 64))
def test_windows_cover_sequence(L, T):
    if T > L:
        return
    w = tk.pool_windows(L, T)
    assert w == brute_windows(L, T)
    assert w[0][0] == 0 and w[-1][1] == L
    assert all(e > s for s, e in w)
    assert all(w[i + 1][0] <= w[i][1] for i in range(T - 1))


def test_sample_frames_examples():
    assert tk.sample_frames(16, 16) == list(range(16))
    assert tk.sample_frames(31, 16) == list(range(0, 31, 2))
    assert tk.sample_frames(1, 4) == [0, 0, 0, 0]
    assert tk.sample_frames(5, 8) == [0, 1, 2, 3, 4, 4, 4, 4]


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 200), st.integers(1, 40))
def test_sample_frames_properties(n, k):
    idx = tk.sample_frames(n, k)
    assert len(idx) == k
    assert all(0 <= i < n for i in idx)
    assert idx == sorted(idx)
    if k > 1 and n >= k:
        assert idx[0] == 0 and idx[-1] == n - 1
        assert len(set(idx)) == k


def test_spatial_pool_examples():
    f = np.random.default_rng(2).normal(size=(2, 2, 3))
    assert np.array_equal(tk.spatial_pool(f, 2), f.reshape(4, 3))
    assert np.array_equal(tk.spatial_pool(np.ones((4, 4, 2)), 2), np.ones((4, 2)))
    f = np.arange(1, 17, dtype=float).reshape(4, 4, 1)
    assert tk.spatial_pool(f, 2)[:, 0].tolist() == [3.5, 5.5, 11.5, 13.5]
    with pytest.raises(ValueError):
        tk.spatial_pool(np.ones((1, 1, 2)), 2)


def test_middle_frame_and_broadcast():
    assert [tk.middle_frame(n) for n in (5, 4, 1)] == [2, 2, 0]
    assert tk.broadcast_global(np.array([[1.0, 2.0]]), 3).tolist() == [[1, 2]] * 3
    assert np.array_equal(tk.broadcast_global(np.zeros((1, 1)), 64), np.zeros((64, 1)))
    assert tk.broadcast_global(np.array([[0.5, -0.5]]), 2).tolist() == [[0.5, -0.5]] * 2
    with pytest.raises(ValueError):
        tk.broadcast_global(np.zeros((2, 2)), 3)


def test_normalize_clip_shapes():
    cfg = tk.PipelineConfig()
    rng = np.random.default_rng(3)
    clip = tk.normalize_clip(rng.normal(size=(100, 5)), rng.normal(size=(20, 4, 4, 6)),
                             rng.normal(size=(1 + 30, 7)), cfg)
    assert clip.audio.shape == (64, 5)
    assert clip.temporal.shape == (cfg.video_frames * cfg.spatial_grid**2, 6)
    assert clip.global_ctx.shape == (64, 7)
    assert clip.image.shape == (cfg.global_tokens, 7)
