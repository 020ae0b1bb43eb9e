"""Multimodal model assembly, the two-stage curriculum trainer and greedy decoding."""

from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
from torch import nn

from .. import mmef
from ..adapter import AdapterSet, AffineMap, TokenSequence, prompt_layout
from ..mmef import SampleRecord
from ..prefusion import PreFusionConfig, PreFusionParams, fuse_backward, fuse, init_params
from ..prompts import POOLS, fill_labels
from ..text import Tokenizer
from ..tokens import ModalityTokens, PipelineConfig, normalize_clip
from .answers import GenerationResult, parse_answer
from .model import ToyLM, ToyLMConfig, masked_lm_loss

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    warmup: int = 100
    peak_lr: float = 1e-4
    weight_decay: float = 0.05
    batch_size: int = 8
    seed: int = 0
    stage: int = 1
    mix_ratio: float = 0.5
    base_steps: int = 400
    base_lr: float = 1e-3
    threads: int = 1

    def __post_init__(self):
        if self.steps < 0 or self.base_steps < 0:
            raise ValueError("step counts must be >= 0")
        if self.steps > 0 and not 0 <= self.warmup < self.steps:
            raise ValueError("warmup must be smaller than the total step count")
        if self.peak_lr < 0 or self.base_lr < 0:
            raise ValueError("learning rates must be >= 0")
        if self.stage not in (1, 2):
            raise ValueError("stage must be 1 or 2")
        if not 0.0 <= self.mix_ratio <= 1.0:
            raise ValueError("mix_ratio must lie in [0, 1]")
        if self.batch_size < 1 or self.threads < 1:
            raise ValueError("batch_size and threads must be >= 1")


def lr_at(step: int, cfg: TrainConfig, peak: float | None = None) -> float:
    """Linear warmup to the peak, then half-cosine decay to zero at ``cfg.steps``."""
    peak = cfg.peak_lr if peak is None else peak
    if step < cfg.warmup:
        return peak * step / cfg.warmup
    span = cfg.steps - cfg.warmup
    if span <= 0:
        return peak
    return peak * 0.5 * (1.0 + math.cos(math.pi * (step - cfg.warmup) / span))


# -- data -----------------------------------------------------------------


@dataclass
class Clip:
    record: SampleRecord
    tokens: ModalityTokens


def load_clip(rec: SampleRecord, cfg: PipelineConfig) -> Clip:
    audio = mmef.load_tensor(rec.resolve(rec.audio_path))
    video = mmef.load_tensor(rec.resolve(rec.video_path))
    glob = mmef.load_tensor(rec.resolve(rec.global_path))
    return Clip(rec, normalize_clip(audio, video, glob, cfg))


@dataclass
class Item:
    clip: Clip
    task: str
    instruction: str
    target: str | None = None


def check_reasoning_target(text: str) -> str:
    parsed = parse_answer(text)
    if not parsed.valid_reasoning:
        raise ValueError(f"reasoning target lacks well-formed <think>/<answer> spans: {text!r}")
    return text


def make_item(clip: Clip, task: str, rng: np.random.Generator, labels: Sequence[str],
              with_target: bool = True) -> Item:
    pool = POOLS[task]
    instruction = fill_labels(pool[int(rng.integers(len(pool)))], labels)
    target = None
    if with_target:
        if task == "recognition":
            target = clip.record.label
        else:
            target = check_reasoning_target(clip.record.reasoning_target)
    return Item(clip, task, instruction, target)


# -- model ----------------------------------------------------------------


@dataclass
class ModelSpec:
    lm: ToyLMConfig
    prefusion: PreFusionConfig
    pipeline: PipelineConfig
    labels: tuple[str, ...]
    streams: tuple[str, ...] = ("fusion", "image", "video", "audio")


class _FuseFn(torch.autograd.Function):
    """Bridges the numpy pre-fusion forward/backward into torch autograd."""

    @staticmethod
    def forward(ctx, a, g, t, names, *tensors):
        params = PreFusionParams.from_named({n: x.detach().numpy() for n, x in zip(names, tensors)})
        inputs = tuple(x.detach().numpy() for x in (a, g, t))
        ctx.names, ctx.params, ctx.inputs = names, params, inputs
        return torch.from_numpy(fuse(*inputs, params).u_f)

    @staticmethod
    def backward(ctx, grad):
        pgrads, igrads = fuse_backward(ctx.inputs, ctx.params, grad.detach().numpy())
        named = pgrads.named()
        return (*(torch.from_numpy(np.ascontiguousarray(x)) for x in igrads), None,
                *(torch.from_numpy(named[n]) for n in ctx.names))


class EmotionModel(nn.Module):
    def __init__(self, spec: ModelSpec, tokenizer: Tokenizer, seed: int = 0):
        super().__init__()
        self.spec = spec
        self.tokenizer = tokenizer
        torch.manual_seed(seed)
        self.lm = ToyLM(replace(spec.lm, vocab_size=len(tokenizer)))
        rng = np.random.default_rng([seed, 1])
        pf = init_params(spec.prefusion, rng)
        self.prefusion = nn.ParameterDict(
            {n.replace(".", "__"): nn.Parameter(torch.from_numpy(x.copy())) for n, x in pf.named().items()})
        d_in = dict(zip(("a", "glo", "temp"), spec.prefusion.input_dims), f=spec.prefusion.dim)
        self.adapters = nn.ModuleDict({k: nn.Linear(d_in[k], spec.lm.embed_dim) for k in ("a", "glo", "temp", "f")})
        with torch.no_grad():
            for k, lin in self.adapters.items():
                bound = 1.0 / math.sqrt(d_in[k])
                lin.weight.copy_(torch.from_numpy(rng.uniform(-bound, bound, lin.weight.shape)))
                lin.bias.copy_(torch.from_numpy(rng.uniform(-bound, bound, lin.bias.shape)))

    # parameter groups
    def trainable_parameters(self) -> list[nn.Parameter]:
        return [*self.lm.lora_parameters(), *self.prefusion.values(), *self.adapters.parameters()]

    def trainable_count(self) -> int:
        return sum(p.numel() for p in self.trainable_parameters())

    def freeze_base(self, seed: int) -> None:
        """Freeze the language model and start fresh LoRA adapters (B = 0)."""
        for p in self.lm.base_parameters():
            p.requires_grad_(False)
        gen = torch.Generator().manual_seed(seed)
        for layer in self.lm.lora_layers():
            layer.reset_lora(gen)
        self.lm.set_lora(True)

    def prefusion_params(self) -> PreFusionParams:
        return PreFusionParams.from_named(
            {n.replace("__", "."): p.detach().numpy() for n, p in self.prefusion.items()})

    def adapter_set(self) -> AdapterSet:
        return AdapterSet({k: AffineMap(lin.weight.detach().double().numpy().T.copy(),
                                        lin.bias.detach().double().numpy().copy())
                           for k, lin in self.adapters.items()})

    def stream_counts(self) -> dict[str, int]:
        p = self.spec.pipeline
        full = {"fusion": p.audio_tokens, "image": p.global_tokens, "video": p.video_tokens,
                "audio": p.audio_tokens}
        return {k: v for k, v in full.items() if k in self.spec.streams}

    def stream_embeddings(self, clips: Sequence[Clip], counts) -> dict[str, torch.Tensor]:
        def stack(attr):
            return torch.from_numpy(np.stack([getattr(c.tokens, attr) for c in clips]).astype(np.float64))

        out = {}
        if counts.get("fusion"):
            names = tuple(n.replace("__", ".") for n in self.prefusion)
            u_f = _FuseFn.apply(stack("audio"), stack("global_ctx"), stack("temporal"), names,
                                *self.prefusion.values())
            out["fusion"] = self.adapters["f"](u_f.float())
        if counts.get("image"):
            out["image"] = self.adapters["glo"](stack("image").float())
        if counts.get("video"):
            out["video"] = self.adapters["temp"](stack("temporal").float())
        if counts.get("audio"):
            out["audio"] = self.adapters["a"](stack("audio").float())
        return out

    def embed_items(self, items: Sequence[Item], blank_streams: bool = False, with_target: bool = True):
        """Right-padded ``(embeds, ids, response_mask)`` for a batch of items.

        ``ids`` holds -1 at embedding positions and padding.  With
        ``blank_streams`` every feature slot is a zero vector, which keeps
        the prompt geometry while hiding the features.
        """
        counts = self.stream_counts()
        if blank_streams:
            e = self.spec.lm.embed_dim
            streams = {k: torch.zeros(len(items), n, e) for k, n in counts.items()}
        else:
            streams = self.stream_embeddings([it.clip for it in items], counts)
        tok, emb = self.tokenizer, self.lm.tok_emb
        rows, id_rows, mask_rows = [], [], []
        for b, it in enumerate(items):
            parts, ids = [], []
            for kind, payload in prompt_layout(counts, tok, it.clip.record.transcript, it.task, it.instruction):
                if kind == "text":
                    parts.append(emb(torch.tensor(payload, dtype=torch.long)))
                    ids += payload
                else:
                    parts.append(streams[kind][b])
                    ids += [-1] * payload
            n_prompt = len(ids)
            if with_target and it.target is not None:
                resp = tok.encode(it.target) + [tok.eos_id]
                parts.append(emb(torch.tensor(resp, dtype=torch.long)))
                ids += resp
            rows.append(torch.cat(parts))
            id_rows.append(ids)
            mask_rows.append([False] * n_prompt + [True] * (len(ids) - n_prompt))
        width = max(len(r) for r in id_rows)
        embeds = torch.zeros(len(items), width, self.spec.lm.embed_dim)
        ids = torch.full((len(items), width), -1, dtype=torch.long)
        mask = torch.zeros(len(items), width, dtype=torch.bool)
        for b, (r, i, m) in enumerate(zip(rows, id_rows, mask_rows)):
            embeds[b, : len(r)] = r
            ids[b, : len(i)] = torch.tensor(i)
            mask[b, : len(m)] = torch.tensor(m)
        return embeds, ids, mask

    def loss(self, items: Sequence[Item], blank_streams: bool = False) -> torch.Tensor:
        embeds, ids, mask = self.embed_items(items, blank_streams)
        return masked_lm_loss(self.lm(embeds), ids, mask)

    def token_sequence(self, item: Item) -> TokenSequence:
        """The prompt (plus target, when set) as a :class:`TokenSequence`."""
        with torch.no_grad():
            embeds, ids, mask = self.embed_items([item])
        elements = [int(i) if i >= 0 else embeds[0, p].numpy().astype(np.float64)
                    for p, i in enumerate(ids[0].tolist())]
        n_prompt = int((~mask[0]).sum())
        spans = [(0, n_prompt, "prompt")]
        if n_prompt < len(elements):
            spans.append((n_prompt, len(elements), "response"))
        return TokenSequence(elements, spans)

    @torch.no_grad()
    def generate(self, item: Item, max_tokens: int = 64) -> GenerationResult:
        """Greedy decoding until ``<eos>`` or ``max_tokens``."""
        if max_tokens <= 0:
            return parse_answer("")
        embeds, _, _ = self.embed_items([item], with_target=False)
        cache = [[] for _ in self.lm.blocks]
        if embeds.shape[1] + max_tokens > self.spec.lm.context:
            raise ValueError("context overflow")
        logits = self.lm(embeds, cache=cache)
        pos, out = embeds.shape[1], []
        for _ in range(max_tokens):
            nxt = int(logits[0, -1].argmax())
            if nxt == self.tokenizer.eos_id:
                break
            out.append(nxt)
            logits = self.lm(self.lm.tok_emb(torch.tensor([[nxt]])), cache=cache, start=pos)
            pos += 1
        return parse_answer(self.tokenizer.decode(out))


def build_tokenizer(records: Sequence[SampleRecord], labels: Sequence[str]) -> Tokenizer:
    from ..adapter import SAYS

    texts = [SAYS, *labels]
    for pool in POOLS.values():
        texts += [fill_labels(p, labels) for p in pool]
    for r in records:
        texts += [r.transcript, r.reasoning_target, r.label]
    return Tokenizer.build(texts)


# -- training -------------------------------------------------------------


class _Batches:
    """Deterministic epoch-shuffled index stream."""

    def __init__(self, n: int, rng: np.random.Generator):
        self.n, self.rng, self.queue = n, rng, []

    def take(self, k: int) -> list[int]:
        out = []
        while len(out) < k:
            if not self.queue:
                self.queue = list(self.rng.permutation(self.n))
            out.append(int(self.queue.pop()))
        return out


_PHASES = {"base": 0, "stage1": 1, "stage2": 2}


@dataclass
class TraceRow:
    step: int
    lr: float
    loss: float


def _optimize(model: EmotionModel, params, make_batch: Callable[[np.random.Generator], list],
              cfg: TrainConfig, steps: int, peak: float, blank_streams: bool, tag: str) -> list[TraceRow]:
    torch.set_num_threads(cfg.threads)
    sched = replace(cfg, steps=steps, warmup=min(cfg.warmup, max(steps - 1, 0)))
    opt = torch.optim.AdamW(params, lr=peak, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng([cfg.seed, _PHASES[tag]])
    trace = []
    model.train()
    for step in range(steps):
        lr = lr_at(step, sched, peak)
        for group in opt.param_groups:
            group["lr"] = lr
        items = make_batch(rng)
        loss = model.loss(items, blank_streams=blank_streams)
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        trace.append(TraceRow(step, lr, loss.detach().item()))
        if step % 100 == 0 or step == steps - 1:
            log.info("%s step %d lr %.3g loss %.4f", tag, step, lr, trace[-1].loss)
    model.eval()
    return trace


def pretrain_base(model: EmotionModel, clips: Sequence[Clip], cfg: TrainConfig) -> list[TraceRow]:
    """Language-model pretraining on recognition and reasoning targets with
    blanked feature slots.

    Stands in for a pretrained backbone; every LM weight is trained, LoRA is off.
    """
    model.lm.set_lora(False)
    labels = model.spec.labels
    batches = _Batches(len(clips), np.random.default_rng([cfg.seed, 7]))

    def make_batch(rng):
        return [make_item(clips[i], "recognition" if rng.random() < 0.5 else "reasoning", rng, labels)
                for i in batches.take(cfg.batch_size)]

    params = [p for p in model.lm.base_parameters() if p.requires_grad]
    return _optimize(model, params, make_batch, cfg, cfg.base_steps, cfg.base_lr, True, "base")


def train_stage1(model: EmotionModel, clips: Sequence[Clip], cfg: TrainConfig) -> list[TraceRow]:
    """Recognition-only alignment: labels as targets, recognition instructions."""
    bad = [c.record.id for c in clips if c.record.task != "recognition"]
    if bad:
        raise ValueError(f"stage 1 takes recognition samples only; got other tasks for {bad[:3]}")
    labels = model.spec.labels
    batches = _Batches(len(clips), np.random.default_rng([cfg.seed, 11]))

    def make_batch(rng):
        return [make_item(clips[i], "recognition", rng, labels) for i in batches.take(cfg.batch_size)]

    return _optimize(model, model.trainable_parameters(), make_batch, replace(cfg, stage=1),
                     cfg.steps, cfg.peak_lr, False, "stage1")


def train_stage2(model: EmotionModel, clips: Sequence[Clip], cfg: TrainConfig) -> list[TraceRow]:
    """Joint recognition and reasoning; each draw is recognition with probability ``mix_ratio``."""
    for c in clips:
        if c.record.task == "reasoning" or cfg.mix_ratio < 1.0:
            check_reasoning_target(c.record.reasoning_target)
    labels = model.spec.labels
    batches = _Batches(len(clips), np.random.default_rng([cfg.seed, 13]))

    def make_batch(rng):
        out = []
        for i in batches.take(cfg.batch_size):
            task = "recognition" if rng.random() < cfg.mix_ratio else "reasoning"
            out.append(make_item(clips[i], task, rng, labels))
        return out

    return _optimize(model, model.trainable_parameters(), make_batch, replace(cfg, stage=2),
                     cfg.steps, cfg.peak_lr, False, "stage2")


def predict(model: EmotionModel, clips: Sequence[Clip], task: str, seed: int = 0,
            max_tokens: int = 48, parallelism: int = 1) -> list[GenerationResult]:
    """Greedy generations in clip order; instructions are drawn up front so
    the result does not depend on ``parallelism``."""
    rng = np.random.default_rng([seed, 17])
    items = [make_item(c, task, rng, model.spec.labels, with_target=False) for c in clips]
    if parallelism <= 1:
        return [model.generate(it, max_tokens) for it in items]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(lambda it: model.generate(it, max_tokens), items))


# -- persistence ----------------------------------------------------------


def write_trace(path: str | os.PathLike, trace: Sequence[TraceRow]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("step\tlr\tloss\n")
        for row in trace:
            fh.write(f"{row.step}\t{row.lr:.10e}\t{row.loss:.10e}\n")


def read_trace(path: str | os.PathLike) -> list[TraceRow]:
    with open(path, encoding="utf-8") as fh:
        if fh.readline().rstrip("\n").split("\t") != ["step", "lr", "loss"]:
            raise ValueError(f"{path}: bad loss-trace header")
        return [TraceRow(int(s), float(lr), float(loss))
                for s, lr, loss in (line.rstrip("\n").split("\t") for line in fh)]


def _meta_path(path) -> Path:
    return Path(str(path) + ".json")


def save_checkpoint(path: str | os.PathLike, model: EmotionModel, meta: dict) -> None:
    """Named tensors in an MMEF container plus a JSON metadata sidecar."""
    tensors = {f"lm.{k}": v.detach().numpy() for k, v in model.lm.state_dict().items()}
    tensors.update(model.prefusion_params().named())
    tensors.update(model.adapter_set().named())
    mmef.save_container(path, tensors)
    spec = model.spec
    full = dict(meta, vocab=model.tokenizer.vocab, labels=list(spec.labels), streams=list(spec.streams),
                lm=asdict(spec.lm), prefusion=asdict(spec.prefusion), pipeline=asdict(spec.pipeline))
    with open(_meta_path(path), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(full, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path: str | os.PathLike) -> tuple[EmotionModel, dict]:
    with open(_meta_path(path), encoding="utf-8") as fh:
        meta = json.load(fh)
    pf = meta["prefusion"]
    spec = ModelSpec(
        lm=ToyLMConfig(**meta["lm"]),
        prefusion=PreFusionConfig(**dict(pf, input_dims=tuple(pf["input_dims"]))),
        pipeline=PipelineConfig(**meta["pipeline"]),
        labels=tuple(meta["labels"]),
        streams=tuple(meta["streams"]),
    )
    model = EmotionModel(spec, Tokenizer(meta["vocab"]), seed=int(meta.get("seed", 0)))
    tensors = mmef.load_container(path)
    state = {k[3:]: torch.from_numpy(v) for k, v in tensors.items() if k.startswith("lm.")}
    model.lm.load_state_dict(state)
    pf_params = PreFusionParams.from_named(tensors)
    with torch.no_grad():
        for n, x in pf_params.named().items():
            model.prefusion[n.replace(".", "__")].copy_(torch.from_numpy(x))
        adapters = AdapterSet.from_named(tensors)
        for k, lin in model.adapters.items():
            lin.weight.copy_(torch.from_numpy(adapters.maps[k].weight.T))
            lin.bias.copy_(torch.from_numpy(adapters.maps[k].bias))
    if meta.get("stage", 0) >= 1:
        for p in model.lm.base_parameters():
            p.requires_grad_(False)
    model.lm.set_lora(meta.get("stage", 0) >= 1)
    model.eval()
    return model, meta
