"""Prompt text assets and placeholder filling."""
from __future__ import annotations

from functools import lru_cache
from importlib import resources

SELECT_PATHS = "select_paths"
PSEUDO_QUESTIONS = "pseudo_questions"
READER_PATHS = "reader_paths"
READER_TRIPLES = "reader_triples"


@lru_cache(maxsize=None)
def load(name: str) -> str:
    return resources.files("gsr").joinpath("prompts", f"{name}.txt").read_text(encoding="utf-8")


def fill(name: str, **values: str) -> str:
    # plain replace: values may themselves contain braces
    text = load(name)
    for key, value in values.items():
        placeholder = "{" + key + "}"
        if placeholder not in text:
            raise KeyError(f"prompt {name!r} has no placeholder {placeholder}")
        text = text.replace(placeholder, value)
    return text
