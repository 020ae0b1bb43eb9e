"""Peak-frame anchored multimodal annotation.

For every clip the frame with the largest summed AU intensity is picked,
three describer endpoints are queried (facial expression and scene on that
frame, vocal tone on the audio), and a consolidator merges the clues with
the subtitle and original label into one description.

Endpoints speak JSON over HTTP: the request body is
``{"role", "sample_id", "payload"}`` and the reply ``{"text", "status"}``.
A base url of ``mock`` (or ``mock:<mode>``) selects an in-process stand-in
with the same contract.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import socket
import threading
import time
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Callable, Sequence

from .mmef import SampleRecord

log = logging.getLogger(__name__)

DESCRIBER_ROLES = ("visual_expression", "visual_objective", "audio_tone")
ROLES = (*DESCRIBER_ROLES, "consolidator", "judge")
ENV_PREFIX = "EMOLLAMA_ENDPOINT_"


class AnnotationError(RuntimeError):
    pass


class EndpointError(RuntimeError):
    """A single request failed (bad status, transport error)."""


@dataclass(frozen=True)
class DescriberEndpoint:
    role: str
    url: str = "mock"
    timeout_ms: int = 5000
    max_retries: int = 2
    backoff_ms: float = 200.0

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown endpoint role {self.role!r}")
        if self.max_retries < 0 or self.timeout_ms <= 0:
            raise ValueError("max_retries must be >= 0 and timeout_ms > 0")


def endpoints_from_env(table: dict[str, DescriberEndpoint], env=os.environ) -> dict[str, DescriberEndpoint]:
    """Override endpoint urls from ``EMOLLAMA_ENDPOINT_<ROLE>`` variables."""
    out = dict(table)
    for role in ROLES:
        url = env.get(ENV_PREFIX + role.upper())
        if url:
            base = out.get(role, DescriberEndpoint(role))
            out[role] = DescriberEndpoint(role, url, base.timeout_ms, base.max_retries, base.backoff_ms)
    return out


# -- clients --------------------------------------------------------------


class HttpDescriber:
    def __init__(self, endpoint: DescriberEndpoint):
        self.endpoint = endpoint

    def __call__(self, role: str, sample_id: str, payload: str) -> str:
        body = json.dumps({"role": role, "sample_id": sample_id, "payload": payload}).encode()
        req = urllib.request.Request(self.endpoint.url, data=body,
                                     headers={"Content-Type": "application/json"})
        try:
            with urllib.request.urlopen(req, timeout=self.endpoint.timeout_ms / 1000) as resp:
                reply = json.loads(resp.read().decode("utf-8"))
        except (socket.timeout, TimeoutError) as exc:
            raise TimeoutError(f"{role}: timed out") from exc
        except (urllib.error.URLError, OSError, ValueError) as exc:
            raise EndpointError(f"{role}: {exc}") from exc
        if reply.get("status") != "ok":
            raise EndpointError(f"{role}: status {reply.get('status')!r}")
        return str(reply.get("text", ""))


def mock_text(role: str, sample_id: str, payload: str) -> str:
    digest = hashlib.sha256(payload.encode()).hexdigest()[:8]
    if role == "consolidator":
        return " | ".join(line.split(": ", 1)[-1] for line in payload.splitlines())
    if role == "judge":
        return f"'Predicted Score': {1 + int(digest, 16) % 10}; 'Reason': mock judgment"
    return f"{role.replace('_', ' ')} of {sample_id} [{digest}]"


class MockDescriber:
    """Deterministic offline endpoint.

    Modes: ``mock`` answers every request, ``mock:down`` always fails,
    ``mock:flaky`` times out on the first attempt per sample, ``mock:empty``
    returns empty text.
    """

    def __init__(self, mode: str = ""):
        if mode not in ("", "down", "flaky", "empty"):
            raise ValueError(f"unknown mock mode {mode!r}")
        self.mode = mode
        self._seen: set[tuple[str, str]] = set()
        self._lock = threading.Lock()

    def __call__(self, role: str, sample_id: str, payload: str) -> str:
        if self.mode == "down":
            raise EndpointError(f"{role}: connection refused")
        if self.mode == "flaky":
            with self._lock:
                first = (role, sample_id) not in self._seen
                self._seen.add((role, sample_id))
            if first:
                raise TimeoutError(f"{role}: timed out")
        if self.mode == "empty":
            return ""
        return mock_text(role, sample_id, payload)


def make_client(endpoint: DescriberEndpoint) -> Callable[[str, str, str], str]:
    if endpoint.url == "mock" or endpoint.url.startswith("mock:"):
        return MockDescriber(endpoint.url.partition(":")[2])
    return HttpDescriber(endpoint)


class DescriberClient:
    """Role-dispatching client with retries and exponential backoff."""

    def __init__(self, endpoints: dict[str, DescriberEndpoint], clients=None, sleep=time.sleep):
        self.endpoints = endpoints
        self.clients = dict(clients or {})
        for role, ep in endpoints.items():
            self.clients.setdefault(role, make_client(ep))
        self.sleep = sleep
        self.retries_used = 0
        self._lock = threading.Lock()

    def request(self, role: str, sample_id: str, payload: str) -> str:
        if role not in self.clients:
            raise AnnotationError(f"{role} unavailable: no endpoint configured")
        ep = self.endpoints.get(role) or DescriberEndpoint(role)
        for attempt in range(ep.max_retries + 1):
            try:
                text = self.clients[role](role, sample_id, payload)
                if attempt:
                    log.info("%s for %s succeeded after %d retries", role, sample_id, attempt)
                return text
            except (EndpointError, TimeoutError) as exc:
                if attempt == ep.max_retries:
                    raise AnnotationError(f"{role} unavailable ({exc})") from exc
                with self._lock:
                    self.retries_used += 1
                log.warning("%s for %s failed (%s), retry %d", role, sample_id, exc, attempt + 1)
                self.sleep(ep.backoff_ms * 2**attempt / 1000)
        raise AssertionError("unreachable")


def serve_mock(host: str = "127.0.0.1", port: int = 0, handler=mock_text) -> ThreadingHTTPServer:
    """Start a background HTTP endpoint answering with ``handler(role, id, payload)``."""

    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            n = int(self.headers.get("Content-Length", 0))
            try:
                req = json.loads(self.rfile.read(n))
                reply = {"text": handler(req["role"], req["sample_id"], req["payload"]), "status": "ok"}
            except Exception as exc:  # reported to the caller, never fatal to the server
                reply = {"text": str(exc), "status": "error"}
            data = json.dumps(reply).encode()
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def log_message(self, *args):
            pass

    server = ThreadingHTTPServer((host, port), Handler)
    threading.Thread(target=server.serve_forever, daemon=True).start()
    return server


# -- AU frames ------------------------------------------------------------


@dataclass(frozen=True)
class AUFrameRecord:
    frame_index: int
    au_intensities: tuple[float, ...]

    def __post_init__(self):
        if self.frame_index < 0:
            raise ValueError("frame_index must be >= 0")
        if not self.au_intensities:
            raise ValueError("au_intensities must be non-empty")
        if any(not v >= 0 for v in self.au_intensities):
            raise ValueError("AU intensities must be finite and >= 0")


def read_au_file(path: str | os.PathLike) -> list[AUFrameRecord]:
    frames = []
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            if not line.strip():
                continue
            try:
                values = tuple(float(v) for v in line.rstrip("\n").split("\t"))
                frames.append(AUFrameRecord(len(frames), values))
            except ValueError as exc:
                raise ValueError(f"{path}:{i + 1}: {exc}") from None
    if not frames:
        raise ValueError(f"{path}: no AU frames")
    return frames


def select_peak_frame(frames: Sequence[AUFrameRecord]) -> int:
    """Position of the frame with the largest AU sum; the first one wins ties."""
    if not frames:
        raise ValueError("empty frame sequence")
    best, best_score = 0, sum(frames[0].au_intensities)
    for k in range(1, len(frames)):
        score = sum(frames[k].au_intensities)
        if score > best_score:
            best, best_score = k, score
    return best


# -- pipeline -------------------------------------------------------------


@dataclass
class AnnotationRecord:
    sample_id: str
    peak_frame: int
    c_ved: str = ""
    c_vod: str = ""
    c_atd: str = ""
    c_ls: str = ""
    c_md: str = ""
    label: str = ""

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, ensure_ascii=False)


def collect_clues(sample: SampleRecord, client: DescriberClient) -> AnnotationRecord:
    """Peak frame plus the three describer outputs; raises on any failure."""
    frames = read_au_file(sample.au_path)
    peak = select_peak_frame(frames)
    frame_ref = f"{sample.video_path}#frame={peak}"
    return AnnotationRecord(
        sample_id=sample.id,
        peak_frame=peak,
        c_ved=client.request("visual_expression", sample.id, frame_ref),
        c_vod=client.request("visual_objective", sample.id, frame_ref),
        c_atd=client.request("audio_tone", sample.id, sample.audio_path),
        c_ls=sample.transcript,
        label=sample.label,
    )


def consolidation_payload(partial: AnnotationRecord) -> str:
    return "\n".join([
        f"subtitle: {partial.c_ls}",
        f"visual expression: {partial.c_ved}",
        f"visual objective: {partial.c_vod}",
        f"audio tone: {partial.c_atd}",
        f"label: {partial.label}",
    ])


def consolidate(partial: AnnotationRecord, client: DescriberClient) -> AnnotationRecord:
    for name in ("c_ls", "c_ved", "c_vod", "c_atd"):
        if not getattr(partial, name).strip():
            raise ValueError(f"missing clue {name}")
    text = client.request("consolidator", partial.sample_id, consolidation_payload(partial))
    if not text.strip():
        raise AnnotationError("empty consolidation")
    return AnnotationRecord(**{**asdict(partial), "c_md": text.strip()})


def annotate_sample(sample: SampleRecord, client: DescriberClient) -> AnnotationRecord:
    return consolidate(collect_clues(sample, client), client)


@dataclass
class PipelineResult:
    records: list[AnnotationRecord]
    failures: list[tuple[str, str]]  # (sample id, reason)


def run_pipeline(samples: Sequence[SampleRecord], client: DescriberClient, parallelism: int = 1,
                 out_path: str | os.PathLike | None = None) -> PipelineResult:
    """Annotate every sample; failures are collected, never raised.

    Records come back (and are appended to ``out_path``) in manifest order
    whatever the completion order.
    """
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")

    def task(sample):
        try:
            return annotate_sample(sample, client), None
        except Exception as exc:  # per-sample isolation
            return None, f"{type(exc).__name__}: {exc}"

    result = PipelineResult([], [])
    sink = open(out_path, "a", encoding="utf-8", newline="\n") if out_path else None
    try:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            for sample, (rec, err) in zip(samples, pool.map(task, samples)):
                if rec is None:
                    result.failures.append((sample.id, err))
                    continue
                result.records.append(rec)
                if sink:
                    sink.write(rec.to_json() + "\n")
    finally:
        if sink:
            sink.close()
    return result


def write_failures(path: str | os.PathLike, failures: Sequence[tuple[str, str]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for sid, reason in failures:
            fh.write(f"{sid}\t{' '.join(reason.split())}\n")


def read_annotations(path: str | os.PathLike) -> list[AnnotationRecord]:
    return [AnnotationRecord(**json.loads(line)) for line in Path(path).read_text("utf-8").splitlines() if line]
