"""Modal adapter projections and the multimodal prompt template.

Prompt layout (every element is prompt span)::

    [Vid] <fusion> <image> <video> <audio> [Vid]
    The person in the video says: <transcript> <task-identifier> <instruction>
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .text import VID, Tokenizer

STREAMS = ("fusion", "image", "video", "audio")
SAYS = "The person in the video says: "

# adapter key feeding each prompt stream
ADAPTER_FOR = {"fusion": "f", "image": "glo", "video": "temp", "audio": "a"}


@dataclass
class AffineMap:
    weight: np.ndarray  # [in, out]
    bias: np.ndarray  # [out]

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]


def project(u: np.ndarray, sigma: AffineMap) -> np.ndarray:
    """Row-wise affine map ``[T, d] -> [T, E]``."""
    u = np.asarray(u)
    if u.ndim != 2 or u.shape[1] != sigma.in_dim:
        raise ValueError(f"input dim {u.shape[-1]} does not match projection input {sigma.in_dim}")
    return u @ sigma.weight + sigma.bias


@dataclass
class AdapterSet:
    maps: dict[str, AffineMap]

    def __post_init__(self):
        if set(self.maps) != {"a", "glo", "temp", "f"}:
            raise ValueError("adapter set needs maps a, glo, temp, f")
        if len({m.out_dim for m in self.maps.values()}) != 1:
            raise ValueError("all adapter maps must share the embedding dim")

    @property
    def embed_dim(self) -> int:
        return self.maps["f"].out_dim

    def named(self) -> dict[str, np.ndarray]:
        out = {}
        for key in ("a", "glo", "temp", "f"):
            out[f"adapter.{key}.weight"] = self.maps[key].weight
            out[f"adapter.{key}.bias"] = self.maps[key].bias
        return out

    @classmethod
    def from_named(cls, tensors: dict[str, np.ndarray]) -> "AdapterSet":
        try:
            return cls({k: AffineMap(np.asarray(tensors[f"adapter.{k}.weight"], dtype=np.float64),
                                     np.asarray(tensors[f"adapter.{k}.bias"], dtype=np.float64))
                        for k in ("a", "glo", "temp", "f")})
        except KeyError as exc:
            raise ValueError(f"missing adapter tensor {exc.args[0]}") from None


def init_adapters(in_dims: dict[str, int], embed_dim: int, rng: np.random.Generator) -> AdapterSet:
    maps = {}
    for key in ("a", "glo", "temp", "f"):
        bound = 1.0 / np.sqrt(in_dims[key])
        maps[key] = AffineMap(rng.uniform(-bound, bound, (in_dims[key], embed_dim)),
                              rng.uniform(-bound, bound, embed_dim))
    return AdapterSet(maps)


def prompt_layout(
    counts: dict[str, int],
    tokenizer: Tokenizer,
    transcript: str,
    task: str,
    instruction: str,
) -> list[tuple[str, Any]]:
    """Template order as ``(kind, payload)`` pieces.

    ``kind`` is ``"text"`` with a list of token ids, or a stream name with
    its token count.  Streams with count 0 are dropped.
    """
    task_id = tokenizer.task_id(task)
    pieces: list[tuple[str, Any]] = [("text", tokenizer.encode(VID))]
    pieces += [(s, counts.get(s, 0)) for s in STREAMS if counts.get(s, 0) > 0]
    pieces.append(("text", tokenizer.encode(VID) + tokenizer.encode(SAYS) + tokenizer.encode(transcript)
                   + [task_id] + tokenizer.encode(instruction)))
    return pieces


@dataclass
class PromptBundle:
    fusion_tokens: np.ndarray
    image_tokens: np.ndarray
    video_tokens: np.ndarray
    audio_tokens: np.ndarray
    transcript: str
    task_identifier: str
    instruction: str

    def streams(self) -> dict[str, np.ndarray]:
        return {"fusion": self.fusion_tokens, "image": self.image_tokens,
                "video": self.video_tokens, "audio": self.audio_tokens}


@dataclass
class TokenSequence:
    """Ordered mix of token ids (``int``) and embedding vectors (``ndarray``).

    ``span_map`` holds non-overlapping ``(start, end, kind)`` runs covering
    every element, ``kind`` being ``"prompt"`` or ``"response"``.
    """

    elements: list
    span_map: list[tuple[int, int, str]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.elements)

    @property
    def n_embeddings(self) -> int:
        return sum(1 for e in self.elements if not isinstance(e, (int, np.integer)))

    def with_response(self, ids: list[int]) -> "TokenSequence":
        n = len(self.elements)
        return TokenSequence(self.elements + list(ids), self.span_map + [(n, n + len(ids), "response")])

    def response_mask(self) -> np.ndarray:
        mask = np.zeros(len(self.elements), dtype=bool)
        for start, end, kind in self.span_map:
            if kind == "response":
                mask[start:end] = True
        return mask


def assemble_prompt(bundle: PromptBundle, tokenizer: Tokenizer) -> TokenSequence:
    streams = bundle.streams()
    dims = {t.shape[1] for t in streams.values() if len(t)}
    if len(dims) > 1:
        raise ValueError("token tensors must share the embedding dim")
    counts = {k: len(v) for k, v in streams.items()}
    elements: list = []
    for kind, payload in prompt_layout(counts, tokenizer, bundle.transcript,
                                       bundle.task_identifier, bundle.instruction):
        if kind == "text":
            elements.extend(payload)
        else:
            elements.extend(np.asarray(row) for row in streams[kind])
    return TokenSequence(elements, [(0, len(elements), "prompt")])


def map_layout(pieces, text_fn: Callable, stream_fn: Callable) -> list:
    """Apply ``text_fn(ids)`` / ``stream_fn(name)`` to each layout piece."""
    return [text_fn(p) if k == "text" else stream_fn(k) for k, p in pieces]
