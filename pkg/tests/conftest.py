from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]

ACCEPTANCE: dict[int, tuple[bool, str]] = {}

TINY_INI = """\
[run]
seed = 0
[pipeline]
audio_tokens = 8
video_frames = 2
spatial_grid = 2
global_tokens = 4
[prefusion]
dim = 16
n_blocks = 1
[model]
layers = 1
heads = 2
embed_dim = 32
context = 256
[train]
steps = 6
warmup = 2
peak_lr = 1e-3
base_steps = 4
batch_size = 2
[synth]
per_class = 2
audio_len = 10, 20
video_len = 3, 6
"""


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.ini"
    path.write_text(TINY_INI)
    return path


@pytest.fixture
def acceptance():
    """Record one acceptance criterion outcome; printed in the terminal summary."""

    def record(number: int, passed: bool, detail: str):
        ACCEPTANCE[number] = (bool(passed), detail)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
