"""Multi-modal LLM client with the classification prompt templates.

Two query styles: closed label sets use the red-rectangle class prompt;
free-text task queries use the task-index prompt whose 'no match' reply
maps to the protocol's 'none' label.
"""

from __future__ import annotations

import base64
import io
import os
from dataclasses import dataclass, field

import requests
from PIL import Image

LABEL_SET_PROMPT = (
    "Identify the object shown in the red rectangle. "
    "Return the class name from {}. If no object is shown, return 'none'"
)

TASK_PROMPT = (
    "The interactive element is shown in the red rectangle. "
    "Determine whether the element in the image can accomplish any task in "
    "the task list. If so, return the task index; otherwise return "
    "'no match'. Tasks: {}"
)

AFFORDANCE_PROMPT = (
    "Extract directly operable affordance elements from the given task "
    "description (e.g., handle, knob, switch, latch, lever). Do not include "
    "whole objects. Output a comma-separated list of nouns. Task: {}."
)


class MllmError(RuntimeError):
    pass


@dataclass
class EndpointConfig:
    """mode 'stub' answers deterministically offline; mode 'openai' posts to
    a chat-completions endpoint; mode 'error' always fails (test hook)."""

    mode: str = "stub"
    base_url: str = "http://localhost:8000/v1"
    model: str = "qwen3-vl-4b"
    api_key_env: str = "MLLM_API_KEY"
    timeout: float = 60.0
    stub_answer: str | None = None
    extra: dict = field(default_factory=dict)


class MllmClient:
    def __init__(self, cfg: EndpointConfig):
        self.cfg = cfg

    def complete(self, prompt: str, images: list[Image.Image]) -> str:
        """One chat turn with optional images; returns the raw text reply."""
        mode = self.cfg.mode
        if mode == "stub":
            return self._stub_reply(prompt)
        if mode == "error":
            raise MllmError("endpoint configured to fail")
        if mode == "openai":
            return self._openai_reply(prompt, images)
        raise MllmError(f"unknown endpoint mode {self.cfg.mode!r}")

    def _stub_reply(self, prompt: str) -> str:
        if self.cfg.stub_answer is not None:
            return self.cfg.stub_answer
        # Deterministic offline behavior: first class for label prompts,
        # first task index for task prompts, empty noun list otherwise.
        if prompt.startswith("Identify the object"):
            inside = prompt.split("from ", 1)[1]
            inside = inside.split(". If no object", 1)[0]
            names = [v.strip(" '\"[]") for v in inside.strip("{}").split(",")]
            return names[0] if names and names[0] else "none"
        if prompt.startswith("The interactive element"):
            return "0"
        return ""

    def _openai_reply(self, prompt: str, images: list[Image.Image]) -> str:
        content: list[dict] = [{"type": "text", "text": prompt}]
        for img in images:
            buf = io.BytesIO()
            img.save(buf, format="PNG")
            b64 = base64.b64encode(buf.getvalue()).decode("ascii")
            content.append(
                {
                    "type": "image_url",
                    "image_url": {"url": f"data:image/png;base64,{b64}"},
                }
            )
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.cfg.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        payload = {
            "model": self.cfg.model,
            "messages": [{"role": "user", "content": content}],
            **self.cfg.extra,
        }
        try:
            resp = requests.post(
                f"{self.cfg.base_url.rstrip('/')}/chat/completions",
                json=payload,
                headers=headers,
                timeout=self.cfg.timeout,
            )
            resp.raise_for_status()
            return resp.json()["choices"][0]["message"]["content"]
        except (requests.RequestException, KeyError, ValueError) as exc:
            raise MllmError(f"endpoint failure: {exc}") from exc
