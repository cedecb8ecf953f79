"""Task-description to affordance-noun extraction for detector vocabularies."""

from __future__ import annotations

from .mllm import AFFORDANCE_PROMPT, EndpointConfig, MllmClient, MllmError

FALLBACK_VOCABULARY = ["handle", "knob", "switch", "button", "lever", "latch"]


def parse_noun_list(raw: str) -> list[str]:
    """Comma-separated noun list -> cleaned, deduplicated strings."""
    seen = []
    for part in raw.split(","):
        noun = part.strip().strip(".").strip("'\"").lower()
        if noun and noun not in seen:
            seen.append(noun)
    return seen


def affordance_nouns(
    task: str, endpoint: EndpointConfig | None = None
) -> list[str]:
    """Directly operable affordance nouns for a task description.

    An empty extraction (or endpoint failure) falls back to the fixed
    affordance vocabulary.
    """
    if not task.strip():
        return list(FALLBACK_VOCABULARY)
    client = MllmClient(endpoint or EndpointConfig())
    try:
        raw = client.complete(AFFORDANCE_PROMPT.format(task), images=[])
    except MllmError:
        return list(FALLBACK_VOCABULARY)
    nouns = parse_noun_list(raw)
    return nouns if nouns else list(FALLBACK_VOCABULARY)
