import json

import numpy as np
import pytest

from emollama import cli, mmef
from emollama.backbone import training as tr
from emollama.config import load
from emollama.prefusion import PreFusionConfig, identity_kernel, init_params, modality_mean, standardize


@pytest.fixture
def corpus(tiny_config):
    assert cli.main(["synth", "--config", str(tiny_config)]) == 0
    return tiny_config


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_synth_default(tmp_path, capsys):
    assert run("synth", "--out", tmp_path / "c") == 0
    assert len(mmef.read_manifest(tmp_path / "c" / "manifest.tsv")) == 360
    assert "360 records" in capsys.readouterr().out


def test_synth_errors(tmp_path, capsys):
    assert run("synth", "--out", "/proc/forbidden/corpus") == 3
    bad = tmp_path / "bad.ini"
    bad.write_text("[synth]\nper_klass = 3\n")
    assert run("synth", "--config", bad) == 2
    assert "per_klass" in capsys.readouterr().err


def test_train_stage1_and_stage2(corpus, capsys):
    out = corpus.parent / "run"
    assert run("train", "--config", corpus) == 0
    printed = capsys.readouterr().out
    assert "trainable parameters:" in printed and "final loss:" in printed
    assert (out / "stage1.mmef").exists() and (out / "stage1.mmef.json").exists()
    trace = tr.read_trace(out / "stage1_loss.tsv")
    assert [r.step for r in trace] == list(range(6))
    assert run("train", "--config", corpus, "--stage", 2) == 4
    assert run("train", "--config", corpus, "--stage", 2, "--init", out / "missing.mmef") == 4
    assert run("train", "--config", corpus, "--stage", 2, "--init", out / "stage1.mmef", "--steps", 3) == 0
    assert json.loads((out / "stage2.mmef.json").read_text())["stage"] == 2


def test_train_without_corpus(tiny_config):
    assert run("train", "--config", tiny_config) == 4


def test_train_zero_steps_is_initialization(corpus):
    cfg_path = corpus.parent / "zero.ini"
    cfg_path.write_text(corpus.read_text().replace("base_steps = 4", "base_steps = 0"))
    assert run("train", "--config", cfg_path, "--steps", 0) == 0
    cfg = load(cfg_path)
    records = mmef.read_manifest(cfg.corpus_dir / "manifest.tsv")
    spec = cfg.model_spec()
    fresh = tr.EmotionModel(spec, tr.build_tokenizer(records, spec.labels), seed=0)
    fresh.freeze_base(0)
    ref = corpus.parent / "fresh.mmef"
    tr.save_checkpoint(ref, fresh, {})
    saved = mmef.load_container(cfg.output_dir / "stage1.mmef")
    expect = mmef.load_container(ref)
    assert list(saved) == list(expect)
    assert all(np.array_equal(saved[k], expect[k]) for k in saved)


def test_eval_predictions(corpus, capsys):
    cfg = load(corpus)
    recs = mmef.read_manifest(cfg.corpus_dir / "manifest.tsv")
    good = corpus.parent / "self.tsv"
    good.write_text("".join(f"{r.id}\t{r.label}\n" for r in recs))
    assert run("eval", "--config", corpus, "--predictions", good) == 0
    report = json.loads((cfg.output_dir / "report.json").read_text())
    assert report["datasets"]["self"]["hit_rate"] == 1.0
    assert "1.00" in capsys.readouterr().out
    assert run("eval", "--config", corpus, "--predictions", f"a={good}", "--predictions", f"b={good}",
               "--groups", "avg=a,b,c") == 5
    assert "'c'" in capsys.readouterr().err
    stray = corpus.parent / "stray.tsv"
    stray.write_text(f"{recs[0].id}\tbananas\n")
    assert run("eval", "--config", corpus, "--predictions", stray, "--metric", "waf") == 5
    assert run("eval", "--config", corpus, "--predictions", good, "--metric", "map") == 5
    scored = corpus.parent / "scored.tsv"
    labels = cfg.synth_config().labels
    scored.write_text("".join(
        f"{r.id}\t{r.label}\t{','.join('1' if l == r.label else '0' for l in labels)}\n" for r in recs))
    assert run("eval", "--config", corpus, "--predictions", scored, "--metric", "map") == 0
    assert json.loads((cfg.output_dir / "report.json").read_text())["datasets"]["scored"]["map"] == 1.0


def test_eval_checkpoint(corpus):
    assert run("train", "--config", corpus) == 0
    cfg = load(corpus)
    assert run("eval", "--config", corpus, "--checkpoint", cfg.output_dir / "stage1.mmef") == 0
    report = json.loads((cfg.output_dir / "report.json").read_text())
    assert "synth-test" in report["datasets"]
    assert len((cfg.output_dir / "predictions_test.tsv").read_text().splitlines()) == 12
    assert run("eval", "--config", corpus, "--checkpoint", cfg.output_dir / "nope.mmef") == 4


def test_annotate(corpus, monkeypatch, capsys):
    cfg_path = corpus.parent / "ann.ini"
    cfg_path.write_text(corpus.read_text() + "[endpoints]\nbackoff_ms = 1\n")
    out = load(cfg_path).output_dir
    assert run("annotate", "--config", cfg_path, "--limit", 10) == 0
    assert len((out / "annotations.jsonl").read_text().splitlines()) == 10
    assert (out / "annotation_failures.tsv").read_text() == ""

    monkeypatch.setenv("EMOLLAMA_ENDPOINT_AUDIO_TONE", "mock:down")
    assert run("annotate", "--config", cfg_path, "--limit", 4) == 6
    monkeypatch.delenv("EMOLLAMA_ENDPOINT_AUDIO_TONE")

    recs = mmef.read_manifest(load(cfg_path).corpus_dir / "manifest.tsv")[:5]
    recs[2].au_path.write_text("garbage\n")
    assert run("annotate", "--config", cfg_path, "--limit", 5) == 0
    failures = (out / "annotation_failures.tsv").read_text().splitlines()
    assert [line.split("\t")[0] for line in failures] == [recs[2].id]


def zero_conv_params(tmp_path):
    p = init_params(PreFusionConfig(dim=4, n_blocks=2, input_dims=(3, 3, 3)), np.random.default_rng(0))
    p.stem_w = identity_kernel(4)
    p.stem_b[...] = 0
    for w, b in zip(p.block_w, p.block_b):
        w[...] = 0
        b[...] = 0
    path = tmp_path / "params.mmef"
    mmef.save_container(path, p.named())
    return path


def test_fuse(tmp_path):
    params = zero_conv_params(tmp_path)
    rng = np.random.default_rng(1)
    paths = []
    for name in ("a", "g", "t"):
        paths.append(tmp_path / f"{name}.mmef")
        mmef.save_tensor(paths[-1], rng.normal(size=(5, 3)))
    args = ["fuse", "--params", params, "--audio", paths[0], "--global", paths[1], "--temporal", paths[2]]
    assert run(*args, "--out", tmp_path / "o1.mmef") == 0
    assert run(*args, "--out", tmp_path / "o2.mmef") == 0
    assert (tmp_path / "o1.mmef").read_bytes() == (tmp_path / "o2.mmef").read_bytes()
    out = mmef.load_container(tmp_path / "o1.mmef")
    assert set(out) == {"u_f", "F_attn", "F_conv", "weights"}
    from emollama.prefusion import PreFusionParams
    p = PreFusionParams.from_named(mmef.load_container(params))
    h = standardize(*(mmef.load_tensor(x) for x in paths), p)
    assert np.array_equal(out["F_conv"], modality_mean(h.F_s)[0].astype(np.float32))
    np.testing.assert_allclose(out["weights"].sum(), 1.0, atol=1e-6)

    mmef.save_tensor(tmp_path / "wide.mmef", rng.normal(size=(5, 7)))
    assert run("fuse", "--params", params, "--audio", tmp_path / "wide.mmef", "--global", paths[1],
               "--temporal", paths[2], "--out", tmp_path / "o3.mmef") == 5
    assert run("fuse", "--params", params, "--audio", tmp_path / "none.mmef", "--global", paths[1],
               "--temporal", paths[2], "--out", tmp_path / "o4.mmef") == 3
