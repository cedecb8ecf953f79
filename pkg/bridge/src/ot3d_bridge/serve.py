"""External classifier backend over the jobs/answers wire protocol.

Reads jobs.jsonl, draws the red annotation rectangle on each referenced
view, queries the MLLM, and writes answers.jsonl atomically. Endpoint
failures degrade to a 'none' answer with an error note; every job is
answered exactly once no matter what.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

from PIL import Image, ImageDraw

from .mllm import LABEL_SET_PROMPT, TASK_PROMPT, EndpointConfig, MllmClient, MllmError

RED = (255, 0, 0)
BOX_WIDTH = 3


class ProtocolViolation(RuntimeError):
    pass


def draw_red_box(image: Image.Image, box: list[float]) -> Image.Image:
    out = image.convert("RGB").copy()
    draw = ImageDraw.Draw(out)
    x0, y0, x1, y1 = box
    draw.rectangle([x0, y0, max(x0 + 1, x1) - 1, max(y0 + 1, y1) - 1],
                   outline=RED, width=BOX_WIDTH)
    return out


def _load_views(job: dict) -> list[Image.Image]:
    images = []
    for view in job.get("views", []):
        path = view.get("image")
        if path is None or not Path(path).is_file():
            continue
        images.append(draw_red_box(Image.open(path), view["box"]))
    return images


def _parse_label(raw: str, job: dict) -> str:
    text = raw.strip().strip(".").strip("'\"")
    lowered = text.lower()
    if lowered in ("", "none", "no match"):
        return "none"
    if job.get("task") is not None:
        # Task-index replies: any valid index affirms the (single) task.
        token = lowered.split()[0].strip(".,")
        if token.isdigit():
            return job["task"]
        return "none" if "no match" in lowered else text
    label_set = job.get("label_set")
    if label_set:
        for candidate in label_set:
            if candidate.lower() == lowered:
                return candidate
        return "none"
    return text


def classify_serve(
    jobs_path: Path | str,
    answers_path: Path | str,
    endpoint: EndpointConfig | None = None,
) -> int:
    """Answer every job in jobs.jsonl; returns the number of answers."""
    endpoint = endpoint or EndpointConfig()
    client = MllmClient(endpoint)
    jobs = []
    with open(jobs_path) as f:
        for line in f:
            if line.strip():
                jobs.append(json.loads(line))

    answers = []
    for job in jobs:
        note = None
        try:
            images = _load_views(job)
            if job.get("label_set") is not None:
                prompt = LABEL_SET_PROMPT.format(
                    "{" + ", ".join(job["label_set"]) + "}"
                )
            elif job.get("task") is not None:
                prompt = TASK_PROMPT.format("{0: " + job["task"] + "}")
            else:
                raise MllmError("job carries neither label_set nor task")
            label = _parse_label(client.complete(prompt, images), job)
        except MllmError as exc:
            label = "none"
            note = str(exc)
        answer = {"job_id": job["job_id"], "label": label, "per_view": None}
        if note is not None:
            answer["error"] = note
        answers.append(answer)

    _write_atomic(answers_path, answers)
    return len(answers)


def _write_atomic(path: Path | str, answers: list[dict]) -> None:
    path = Path(path)
    fd, tmp_name = tempfile.mkstemp(
        dir=str(path.parent) or ".", prefix=".answers-", suffix=".jsonl"
    )
    try:
        with os.fdopen(fd, "w") as f:
            for answer in answers:
                f.write(json.dumps(answer, sort_keys=True) + "\n")
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def validate_protocol_files(jobs_path: Path | str, answers_path: Path | str) -> None:
    """Raise ProtocolViolation unless answers match jobs one-to-one."""
    with open(jobs_path) as f:
        job_ids = [json.loads(line)["job_id"] for line in f if line.strip()]
    with open(answers_path) as f:
        answer_ids = [json.loads(line)["job_id"] for line in f if line.strip()]
    expected = set(job_ids)
    seen = set()
    for aid in answer_ids:
        if aid not in expected:
            raise ProtocolViolation(f"answer references unknown job_id {aid}")
        if aid in seen:
            raise ProtocolViolation(f"job_id {aid} answered more than once")
        seen.add(aid)
    missing = expected - seen
    if missing:
        raise ProtocolViolation(f"jobs never answered: {sorted(missing)}")
