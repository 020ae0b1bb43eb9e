"""INI-style run configuration (``key = value`` lines under ``[section]`` headers)."""

from __future__ import annotations

import configparser
import io
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .annotate import ROLES, DescriberEndpoint
from .backbone.model import ToyLMConfig
from .backbone.training import TrainConfig
from .prefusion import PreFusionConfig
from .synthgen import SynthConfig
from .tokens import PipelineConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    output_dir: str = "run"
    corpus_dir: str = "corpus"
    parallelism: int = 1
    threads: int = 1


@dataclass(frozen=True)
class FusionSection:
    dim: int = 64
    n_blocks: int = 3
    kernel_size: int = 3


@dataclass(frozen=True)
class ModelSection:
    layers: int = 4
    heads: int = 4
    embed_dim: int = 256
    context: int = 512
    lora_rank: int = 8
    lora_alpha: float = 16.0
    streams: tuple[str, ...] = ("fusion", "image", "video", "audio")


@dataclass(frozen=True)
class TrainSection:
    steps: int = 2000
    warmup: int = 100
    peak_lr: float = 1e-4
    weight_decay: float = 0.05
    batch_size: int = 8
    mix_ratio: float = 0.5
    base_steps: int = 400
    base_lr: float = 1e-3


@dataclass(frozen=True)
class SynthSection:
    n_classes: int = 6
    per_class: int = 20
    snr: float = 2.0
    label_names: tuple[str, ...] = SynthConfig.label_names
    audio_dim: int = 32
    global_dim: int = 32
    temporal_dim: int = 32
    audio_len: tuple[int, ...] = (40, 160)
    video_len: tuple[int, ...] = (8, 40)
    frame_grid: int = 4
    patches: int = 16
    n_aus: int = 17
    keyword_prob: float = 0.8


@dataclass(frozen=True)
class EndpointSection:
    timeout_ms: int = 5000
    max_retries: int = 2
    backoff_ms: float = 200.0
    visual_expression: str = "mock"
    visual_objective: str = "mock"
    audio_tone: str = "mock"
    consolidator: str = "mock"
    judge: str = "mock"


SECTIONS = {
    "run": RunSection,
    "pipeline": PipelineConfig,
    "prefusion": FusionSection,
    "model": ModelSection,
    "train": TrainSection,
    "synth": SynthSection,
    "endpoints": EndpointSection,
}


@dataclass(frozen=True)
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    prefusion: FusionSection = field(default_factory=FusionSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    synth: SynthSection = field(default_factory=SynthSection)
    endpoints: EndpointSection = field(default_factory=EndpointSection)
    base_dir: Path = field(default=Path("."), compare=False)

    # derived views ---------------------------------------------------------

    def path(self, value: str) -> Path:
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def output_dir(self) -> Path:
        return self.path(self.run.output_dir)

    @property
    def corpus_dir(self) -> Path:
        return self.path(self.run.corpus_dir)

    def synth_config(self) -> SynthConfig:
        s = self.synth
        return SynthConfig(
            n_classes=s.n_classes, per_class=s.per_class, snr=s.snr, seed=self.run.seed,
            label_names=s.label_names, audio_dim=s.audio_dim, global_dim=s.global_dim,
            temporal_dim=s.temporal_dim, audio_len=tuple(s.audio_len), video_len=tuple(s.video_len),
            frame_grid=s.frame_grid, patches=s.patches, n_aus=s.n_aus, keyword_prob=s.keyword_prob)

    def prefusion_config(self) -> PreFusionConfig:
        s = self.synth
        return PreFusionConfig(dim=self.prefusion.dim, tokens=self.pipeline.audio_tokens,
                               n_blocks=self.prefusion.n_blocks, kernel_size=self.prefusion.kernel_size,
                               input_dims=(s.audio_dim, s.global_dim, s.temporal_dim))

    def lm_config(self) -> ToyLMConfig:
        m = self.model
        return ToyLMConfig(layers=m.layers, heads=m.heads, embed_dim=m.embed_dim, context=m.context,
                           lora_rank=m.lora_rank, lora_alpha=m.lora_alpha)

    def train_config(self, stage: int = 1, steps: int | None = None) -> TrainConfig:
        t = self.train
        return TrainConfig(steps=t.steps if steps is None else steps, warmup=t.warmup, peak_lr=t.peak_lr,
                           weight_decay=t.weight_decay, batch_size=t.batch_size, seed=self.run.seed,
                           stage=stage, mix_ratio=t.mix_ratio, base_steps=t.base_steps, base_lr=t.base_lr,
                           threads=self.run.threads)

    def model_spec(self):
        from .backbone.training import ModelSpec

        return ModelSpec(self.lm_config(), self.prefusion_config(), self.pipeline,
                         self.synth_config().labels, self.model.streams)

    def endpoint_table(self) -> dict[str, DescriberEndpoint]:
        e = self.endpoints
        return {role: DescriberEndpoint(role, getattr(e, role), e.timeout_ms, e.max_retries, e.backoff_ms)
                for role in ROLES}

    def validate(self) -> "RunConfig":
        try:
            self.synth_config()
            self.prefusion_config()
            self.lm_config()
            if self.train.steps > 0:
                self.train_config()
            self.endpoint_table()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.pipeline.video_tokens != self.pipeline.audio_tokens:
            raise ConfigError("pipeline: video_frames * spatial_grid^2 must equal audio_tokens")
        if self.run.parallelism < 1 or self.run.threads < 1:
            raise ConfigError("run: parallelism and threads must be >= 1")
        return self


def _parse_value(section: str, key: str, raw: str, default):
    try:
        if isinstance(default, bool):
            return raw.strip().lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [x.strip() for x in raw.split(",") if x.strip()]
            if default and isinstance(default[0], int):
                return tuple(int(x) for x in items)
            return tuple(items)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}") from None


def _format_value(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def loads(text: str, base_dir: str | os.PathLike = ".") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc.message.splitlines()[0]}") from None
    sections = {}
    for name in parser.sections():
        if name not in SECTIONS:
            raise ConfigError(f"unknown section [{name}]")
        cls = SECTIONS[name]
        defaults = {f.name: f.default for f in fields(cls)}
        values = {}
        for key, raw in parser.items(name):
            if key not in defaults:
                raise ConfigError(f"unknown key {key!r} in [{name}]")
            values[key] = _parse_value(name, key, raw, defaults[key])
        try:
            sections[name] = cls(**values)
        except ValueError as exc:
            raise ConfigError(f"[{name}] {exc}") from None
    return RunConfig(**sections, base_dir=Path(base_dir)).validate()


def load(path: str | os.PathLike | None) -> RunConfig:
    if path is None:
        return RunConfig().validate()
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc.strerror}") from None
    return loads(text, p.parent)


def dumps(cfg: RunConfig) -> str:
    buf = io.StringIO()
    for name in SECTIONS:
        buf.write(f"[{name}]\n")
        section = getattr(cfg, name)
        for f in fields(section):
            buf.write(f"{f.name} = {_format_value(getattr(section, f.name))}\n")
        buf.write("\n")
    return buf.getvalue()


def override(cfg: RunConfig, section: str, **values) -> RunConfig:
    return replace(cfg, **{section: replace(getattr(cfg, section), **values)}).validate()
