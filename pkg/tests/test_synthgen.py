import hashlib
from pathlib import Path

import numpy as np
import pytest

from emollama import mmef
from emollama.annotate import read_au_file
from emollama.backbone.answers import parse_answer
from emollama.synthgen import SynthConfig, SynthError, class_patterns, generate

SMALL = dict(audio_len=(10, 20), video_len=(3, 6))


def tree_digest(root: Path) -> str:
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_same_seed_byte_identical(tmp_path):
    cfg = SynthConfig(per_class=2, seed=3, **SMALL)
    generate(cfg, tmp_path / "a")
    generate(cfg, tmp_path / "b")
    assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")
    generate(SynthConfig(per_class=2, seed=4, **SMALL), tmp_path / "c")
    assert tree_digest(tmp_path / "a") != tree_digest(tmp_path / "c")


def test_record_count_and_integrity(tmp_path):
    cfg = SynthConfig(per_class=10, **SMALL)
    recs = generate(cfg, tmp_path)
    assert len(recs) == 180
    back = mmef.read_manifest(tmp_path / "manifest.tsv")
    assert [r.id for r in back] == [r.id for r in recs]
    assert len({r.id for r in back}) == 180
    for split in cfg.splits:
        assert sum(r.split == split for r in back) == 60
    for r in back[::17]:
        assert r.label in cfg.labels
        a = mmef.load_tensor(r.resolve(r.audio_path))
        v = mmef.load_tensor(r.resolve(r.video_path))
        g = mmef.load_tensor(r.resolve(r.global_path))
        assert 10 <= a.shape[0] <= 20 and a.shape[1] == cfg.audio_dim
        assert 3 <= v.shape[0] <= 6 and v.shape[1:] == (cfg.frame_grid, cfg.frame_grid, cfg.temporal_dim)
        assert g.shape == (1 + cfg.patches, cfg.global_dim)
        assert len(read_au_file(r.au_path)) == v.shape[0]
        parsed = parse_answer(r.reasoning_target)
        assert parsed.valid_reasoning and parsed.answer == r.label


def test_class_signal_planted_and_removed(tmp_path):
    for snr, expect_gap in ((2.0, True), (0.0, False)):
        recs = generate(SynthConfig(per_class=8, snr=snr, seed=1, **SMALL), tmp_path / str(snr))
        feats = {}
        for r in recs:
            feats.setdefault(r.label, []).append(mmef.load_tensor(r.resolve(r.audio_path)).mean(axis=0))
        means = np.array([np.mean(v, axis=0) for v in feats.values()])
        spread = np.linalg.norm(means - means.mean(axis=0), axis=1).mean()
        assert (spread > 0.5) == expect_gap


def test_patterns_orthonormal():
    pats = class_patterns(SynthConfig())
    for p in pats:
        flat = p.reshape(p.shape[0], -1)
        np.testing.assert_allclose(flat @ flat.T, np.eye(flat.shape[0]), atol=1e-12)


def test_keyword_correlation(tmp_path):
    recs = generate(SynthConfig(per_class=20, **SMALL), tmp_path)
    with_kw = [r for r in recs if "mention" in r.reasoning_target]
    assert 0.65 < len(with_kw) / len(recs) < 0.95


def test_unwritable_output():
    with pytest.raises(SynthError):
        generate(SynthConfig(per_class=1, **SMALL), "/proc/no/such/dir")


def test_config_guards():
    with pytest.raises(ValueError):
        SynthConfig(snr=-1)
    with pytest.raises(ValueError):
        SynthConfig(n_classes=3, label_names=("a", "b"))
