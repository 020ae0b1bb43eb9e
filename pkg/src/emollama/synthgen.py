"""Deterministic synthetic tri-modal emotion corpus.

Every clip of class ``c`` carries ``amp * pattern[c]`` in each modality on
top of unit Gaussian noise.  One modality per clip is dominant (amplitude
``snr``), the other two get ``snr / 2``.  Class patterns are orthonormal
per modality, so ``snr`` alone sets separability.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import mmef
from .mmef import SampleRecord
from .tokens import middle_frame

DEFAULT_LABELS = ("neutral", "happy", "sad", "angry", "surprise", "worried")

KEYWORDS = {
    "neutral": ("okay", "fine", "normal"),
    "happy": ("wonderful", "great", "delighted"),
    "sad": ("miserable", "lonely", "heartbroken"),
    "angry": ("furious", "outraged", "annoyed"),
    "surprise": ("unbelievable", "shocked", "amazed"),
    "worried": ("anxious", "nervous", "uneasy"),
}

KEYWORD_TEMPLATES = (
    "honestly i feel {kw} about the whole thing .",
    "it was {kw} when they told me the news .",
    "well , that is {kw} , i guess .",
    "you know , everything about today seems {kw} .",
)
PLAIN_TEMPLATES = (
    "we talked about the meeting yesterday .",
    "i will call you after lunch .",
    "the train was on time this morning .",
    "let me check the schedule first .",
)

MODALITY_NAMES = ("audio", "global visual", "temporal visual")
SPLITS = ("train", "val", "test")


class SynthError(OSError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    n_classes: int = 6
    per_class: int = 20
    snr: float = 2.0
    seed: int = 0
    label_names: tuple[str, ...] = DEFAULT_LABELS
    audio_dim: int = 32
    global_dim: int = 32
    temporal_dim: int = 32
    audio_len: tuple[int, int] = (40, 160)
    video_len: tuple[int, int] = (8, 40)
    frame_grid: int = 4
    patches: int = 16
    n_aus: int = 17
    keyword_prob: float = 0.8
    splits: tuple[str, ...] = field(default=SPLITS)

    def __post_init__(self):
        if self.snr < 0:
            raise ValueError("snr must be >= 0")
        if len(self.label_names) < self.n_classes:
            raise ValueError("need one label name per class")
        if self.n_classes > min(self.audio_dim, self.global_dim, self.temporal_dim):
            raise ValueError("orthogonal class patterns need n_classes <= feature dim")
        if len(set(self.splits)) != len(self.splits):
            raise ValueError("duplicate split names")

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(self.label_names[: self.n_classes])


def class_patterns(cfg: SynthConfig) -> list[np.ndarray]:
    """Per modality an ``[n_classes, dim]`` matrix of orthonormal rows."""
    rng = np.random.default_rng([cfg.seed, 0x5EED])
    out = []
    for dim in (cfg.audio_dim, cfg.global_dim, cfg.temporal_dim):
        q, _ = np.linalg.qr(rng.standard_normal((dim, cfg.n_classes)))
        out.append(q.T.copy())
    return out


def _keywords(label: str) -> tuple[str, ...]:
    return KEYWORDS.get(label, (label,))


def make_transcript(rng: np.random.Generator, label: str, labels, snr: float, keyword_prob: float):
    """Templated sentence; returns (text, keyword or None).

    With ``snr == 0`` the keyword comes from a random class, so the text
    channel is as uninformative as the features.
    """
    if rng.random() >= keyword_prob:
        return PLAIN_TEMPLATES[rng.integers(len(PLAIN_TEMPLATES))], None
    source = label if snr > 0 else labels[rng.integers(len(labels))]
    kws = _keywords(source)
    kw = kws[rng.integers(len(kws))]
    return KEYWORD_TEMPLATES[rng.integers(len(KEYWORD_TEMPLATES))].format(kw=kw), kw


def reasoning_target(label: str, dominant: int, keyword: str | None) -> str:
    words = f"the words mention {keyword}" if keyword else "the words give no clear hint"
    return (f"<think> the {MODALITY_NAMES[dominant]} stream carries the clearest cue , {words} , "
            f"so the expression points to {label} . </think> <answer> {label} </answer>")


def au_table(rng: np.random.Generator, n_frames: int, n_aus: int) -> np.ndarray:
    """Non-negative AU intensities with a bump near the middle frame."""
    peak = int(np.clip(middle_frame(n_frames) + rng.integers(-2, 3), 0, n_frames - 1))
    base = np.abs(rng.normal(0.0, 0.3, (n_frames, n_aus)))
    bump = np.exp(-0.5 * ((np.arange(n_frames) - peak) / 1.5) ** 2)
    return base + bump[:, None] * rng.uniform(0.5, 2.0, n_aus)


def write_au_table(path: Path, table: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in table:
            fh.write("\t".join(f"{v:.4f}" for v in row) + "\n")


def _sample(cfg: SynthConfig, patterns, split_idx: int, cls: int, j: int):
    rng = np.random.default_rng([cfg.seed, split_idx, cls, j])
    label = cfg.labels[cls]
    dominant = int(rng.integers(3))
    amp = [cfg.snr if m == dominant else cfg.snr / 2 for m in range(3)]

    n_audio = int(rng.integers(cfg.audio_len[0], cfg.audio_len[1] + 1))
    audio = amp[0] * patterns[0][cls] + rng.standard_normal((n_audio, cfg.audio_dim))

    patches = amp[1] * patterns[1][cls] + rng.standard_normal((cfg.patches, cfg.global_dim))
    global_frame = np.concatenate([patches.mean(axis=0, keepdims=True), patches])

    n_frames = int(rng.integers(cfg.video_len[0], cfg.video_len[1] + 1))
    g = cfg.frame_grid
    video = amp[2] * patterns[2][cls] + rng.standard_normal((n_frames, g, g, cfg.temporal_dim))

    aus = au_table(rng, n_frames, cfg.n_aus)
    transcript, kw = make_transcript(rng, label, cfg.labels, cfg.snr, cfg.keyword_prob)
    return label, dominant, audio, video, global_frame, aus, transcript, kw


def generate(cfg: SynthConfig, out_dir: str | os.PathLike) -> list[SampleRecord]:
    """Write feature files plus ``manifest.tsv`` under ``out_dir``."""
    out = Path(out_dir)
    patterns = class_patterns(cfg)
    records = []
    try:
        for sub in ("audio", "video", "global"):
            (out / sub).mkdir(parents=True, exist_ok=True)
        for s, split in enumerate(cfg.splits):
            for j in range(cfg.per_class):
                for c in range(cfg.n_classes):
                    sid = f"{split}{len(records):05d}"
                    label, dom, audio, video, glob, aus, transcript, kw = _sample(cfg, patterns, s, c, j)
                    rec = SampleRecord(
                        id=sid,
                        audio_path=f"audio/{sid}.mmef",
                        video_path=f"video/{sid}.mmef",
                        global_path=f"global/{sid}.mmef",
                        transcript=transcript,
                        label=label,
                        task="recognition",
                        split=split,
                        reasoning_target=reasoning_target(label, dom, kw),
                        root=out,
                    )
                    mmef.save_tensor(out / rec.audio_path, audio)
                    mmef.save_tensor(out / rec.video_path, video)
                    mmef.save_tensor(out / rec.global_path, glob)
                    write_au_table(rec.au_path, aus)
                    records.append(rec)
        mmef.write_manifest(out / "manifest.tsv", records)
    except OSError as exc:
        raise SynthError(f"cannot write corpus under {exc.filename or out}: {exc.strerror}") from exc
    return records
