"""Parsing of generated answers."""

from __future__ import annotations

import re
from dataclasses import dataclass

_TAG = re.compile(r"</?(think|answer)>")


@dataclass
class GenerationResult:
    raw: str
    answer: str | None = None
    think: str | None = None
    malformed: bool = False
    tagged: bool = False

    @property
    def valid_reasoning(self) -> bool:
        """Both spans present, well nested and a non-empty answer."""
        return self.tagged and not self.malformed and self.think is not None and bool(self.answer)


def _spans(text: str):
    """(name, open_end, close_start) for top-level tag pairs; None if badly nested."""
    stack, spans = [], []
    for m in _TAG.finditer(text):
        name, closing = m.group(1), m.group(0).startswith("</")
        if not closing:
            if stack:  # no nesting of think/answer inside each other
                return None
            stack.append((name, m.end()))
        else:
            if not stack or stack[-1][0] != name:
                return None
            _, start = stack.pop()
            spans.append((name, start, m.start()))
    return None if stack else spans


def parse_answer(text: str) -> GenerationResult:
    """Extract ``<think>`` / ``<answer>`` spans; untagged text is the answer itself.

    Unclosed or crossing tags set ``malformed`` and leave ``answer`` empty.
    """
    res = GenerationResult(raw=text)
    if not _TAG.search(text):
        res.answer = text.strip().lower() or None
        return res
    res.tagged = True
    spans = _spans(text)
    if spans is None:
        res.malformed = True
        return res
    for name, start, end in spans:
        body = text[start:end].strip()
        if name == "answer" and res.answer is None:
            res.answer = body.lower() or None
        elif name == "think" and res.think is None:
            res.think = body
    return res
