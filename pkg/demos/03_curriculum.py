"""
Two-stage curriculum on the synthetic corpus
============================================

Stage 1 aligns features to labels with recognition prompts only.  Stage 2
mixes in reasoning prompts whose targets carry <think>/<answer> spans.
Uses the desk-scale config; expect a few minutes on one core.

    python demos/03_curriculum.py [--snr 2.0]
"""

import argparse
import logging
import tempfile
import time
from pathlib import Path

import numpy as np

from emollama import config, metrics
from emollama.backbone import training as tr
from emollama.synthgen import generate

ap = argparse.ArgumentParser()
ap.add_argument("--snr", type=float, default=2.0)
ap.add_argument("--config", default=str(Path(__file__).resolve().parents[1] / "configs" / "desk.ini"))
args = ap.parse_args()
logging.basicConfig(level=logging.INFO, format="%(message)s")

cfg = config.override(config.load(args.config), "synth", snr=args.snr)
work = Path(tempfile.mkdtemp(prefix="emollama-demo-"))

# %% corpus
records = generate(cfg.synth_config(), work / "corpus")
train = [tr.load_clip(r, cfg.pipeline) for r in records if r.split == "train"]
test = [tr.load_clip(r, cfg.pipeline) for r in records if r.split == "test"]
print(f"{len(train)} train / {len(test)} test clips, snr={args.snr}")
print("sample reasoning target:", records[0].reasoning_target)

# %% base LM, then stage 1
spec = cfg.model_spec()
model = tr.EmotionModel(spec, tr.build_tokenizer(records, spec.labels), seed=cfg.run.seed)
t0 = time.perf_counter()
tr.pretrain_base(model, train, cfg.train_config())
model.freeze_base(cfg.run.seed)
print("trainable parameters after freezing:", model.trainable_count())
trace = tr.train_stage1(model, train, cfg.train_config(stage=1))
print(f"stage 1 final loss {trace[-1].loss:.4f} ({time.perf_counter() - t0:.0f}s)")


def hit(results):
    return metrics.hit_rate((r.answer or "", c.record.label) for r, c in zip(results, test))


s1 = hit(tr.predict(model, test, "recognition", max_tokens=4))
print(f"stage 1 held-out hit rate: {s1:.3f}")

# %% stage 2
tr.train_stage2(model, train, cfg.train_config(stage=2))
reasoning = tr.predict(model, test, "reasoning")
print(f"well-formed reasoning: {np.mean([r.valid_reasoning for r in reasoning]):.3f}")
print(f"answer-span hit rate:  {hit(reasoning):.3f}")
print(f"recognition hit rate:  {hit(tr.predict(model, test, 'recognition', max_tokens=4)):.3f}")
print("example:", reasoning[0].raw)
