"""Prompt template expansion.

A template carries one slot.  A plain slot holds comma-separated fillers
and expands to one string per filler:

    "a photo of a {not blond, blond} hair people"
        -> ["a photo of a not blond hair people",
            "a photo of a blond hair people"]

A bracketed slot holds several filler groups and expands to one list per
group (multi-source debiasing):

    "a photo of a [{old, not old},{young, not young}] people"
        -> [["a photo of a old people", "a photo of a not old people"],
            ["a photo of a young people", "a photo of a not young people"]]
"""
from __future__ import annotations

import re

_SLOT = re.compile(r"\{([^{}]*)\}")
_MULTI = re.compile(r"\[(\s*\{[^\[\]]*\}\s*(?:,\s*\{[^\[\]]*\}\s*)*)\]")


class TemplateError(ValueError):
    pass


def _fillers(body: str, template: str) -> list[str]:
    parts = [p.strip() for p in body.split(",")]
    if any(not p for p in parts):
        raise TemplateError(f"empty filler in template {template!r}")
    if len(parts) < 2:
        raise TemplateError(f"template needs >= 2 fillers: {template!r}")
    return parts


def expand(template: str) -> list[str]:
    """Expand a single-slot template into one string per filler."""
    slots = _SLOT.findall(template)
    if len(slots) != 1:
        raise TemplateError(f"expected exactly one {{...}} slot in {template!r}")
    return [_SLOT.sub(filler, template, count=1) for filler in _fillers(slots[0], template)]


def expand_groups(template: str) -> list[list[str]]:
    """Expand a debiasing template into one prompt list per filler group.

    A plain ``{...}`` slot yields a single group; a ``[{...},{...}]``
    slot yields one group per inner braces.
    """
    multi = _MULTI.search(template)
    if multi is None:
        return [expand(template)]
    inner = multi.group(1)
    bodies = _SLOT.findall(inner)
    if not bodies:
        raise TemplateError(f"no filler groups found in {template!r}")
    groups = []
    for body in bodies:
        sub = template[: multi.start()] + "{" + body + "}" + template[multi.end() :]
        groups.append(expand(sub))
    return groups
