import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emollama import config as cf


def test_defaults_roundtrip():
    text = cf.dumps(cf.RunConfig())
    assert cf.dumps(cf.loads(text)) == text
    assert cf.loads(text) == cf.RunConfig()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 8), st.floats(1e-6, 1e-2), st.floats(0, 1),
       st.sampled_from([1, 3, 5]))
def test_roundtrip_idempotent(seed, batch, lr, rho, k):
    cfg = cf.override(cf.RunConfig(), "run", seed=seed)
    cfg = cf.override(cfg, "train", batch_size=batch, peak_lr=lr, mix_ratio=rho)
    cfg = cf.override(cfg, "prefusion", kernel_size=k)
    once = cf.dumps(cfg)
    assert cf.dumps(cf.loads(once)) == once
    assert cf.loads(once) == cfg


def test_defaults_match_toy_scale():
    cfg = cf.RunConfig()
    assert cfg.pipeline.audio_tokens == 64 and cfg.pipeline.global_tokens == 16
    assert cfg.prefusion_config().dim == 64 and cfg.prefusion_config().n_blocks == 3
    lm = cfg.lm_config()
    assert (lm.layers, lm.heads, lm.embed_dim, lm.context, lm.lora_rank, lm.lora_alpha) == (4, 4, 256, 512, 8, 16.0)
    tc = cfg.train_config()
    assert (tc.steps, tc.warmup, tc.peak_lr, tc.weight_decay, tc.mix_ratio) == (2000, 100, 1e-4, 0.05, 0.5)
    assert cfg.synth_config().n_classes == 6


@pytest.mark.parametrize("text,needle", [
    ("[train]\nbogus = 1\n", "bogus"),
    ("[nosuch]\nx = 1\n", "nosuch"),
    ("[train]\nsteps = many\n", "steps"),
    ("[prefusion]\nkernel_size = 4\n", "kernel_size"),
    ("[pipeline]\naudio_tokens = 10\n", "audio_tokens"),
    ("not an ini", "malformed"),
])
def test_rejections(text, needle):
    with pytest.raises(cf.ConfigError, match=needle):
        cf.loads(text)


def test_paths_relative_to_config(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[run]\noutput_dir = out\n")
    cfg = cf.load(p)
    assert cfg.output_dir == tmp_path / "out"
    with pytest.raises(cf.ConfigError):
        cf.load(tmp_path / "missing.ini")
