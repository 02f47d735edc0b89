"""Nudge content rendering: {{field}} placeholder substitution.

Substitution is literal: only {{identifier}} spans are touched, every
other byte of the template passes through unchanged. Integer values of
1000 or more render with thousands separators. A placeholder naming a
field missing from the user's context raises, so a nudge is dropped and
logged rather than delivered half-rendered.
"""

from __future__ import annotations

import re
from typing import Mapping

PLACEHOLDER = re.compile(r"\{\{([A-Za-z_][A-Za-z0-9_]*)\}\}")


class TemplateFieldError(Exception):
    def __init__(self, placeholder: str):
        self.placeholder = placeholder
        super().__init__(f"template placeholder {{{{{placeholder}}}}} has no context field")


def format_value(value: object) -> str:
    if isinstance(value, bool):
        return str(value)
    if isinstance(value, int):
        return f"{value:,}"
    if isinstance(value, float):
        return f"{int(value):,}" if value.is_integer() else str(value)
    return str(value)


def render_template(template, user_context: Mapping[str, object]) -> str:
    """Render a template (or its text) against the user's context fields."""
    text = getattr(template, "text", template)

    def substitute(match: re.Match) -> str:
        name = match.group(1)
        if name not in user_context:
            raise TemplateFieldError(name)
        return format_value(user_context[name])

    return PLACEHOLDER.sub(substitute, text)


def placeholders(text: str) -> list[str]:
    return PLACEHOLDER.findall(text)
