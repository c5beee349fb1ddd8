"""
Prompt Templates
Loads the per-role system/user templates shipped in prompts/ and renders them.
"""

import logging
import os
import re
from dataclasses import dataclass
from typing import Dict, Optional

from .errors import ConfigurationError
from .models import RoleTag

logger = logging.getLogger(__name__)

DEFAULT_PROMPTS_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "prompts")

PLACEHOLDERS = ("user_query", "query", "notes", "query_log", "chunks", "n_questions", "hypothesis")

_PLACEHOLDER = re.compile(r"\{(\w+)\}")
_VERSION_HEADER = re.compile(r"^#\s*prompt-version:\s*(\d+)\s*$")


@dataclass(frozen=True)
class PromptTemplate:
    """System and user template for one role"""
    role_tag: RoleTag
    system: str
    user: str
    version: int = 1


def _read_template(path: str) -> tuple:
    """Returns (body, version); leading '#' lines are a header and are stripped"""
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = f.read().splitlines()
    except OSError as e:
        raise ConfigurationError(f"cannot read prompt template {path}: {e}") from e

    version = 1
    body_start = 0
    for index, line in enumerate(lines):
        if not line.startswith("#"):
            body_start = index
            break
        match = _VERSION_HEADER.match(line)
        if match:
            version = int(match.group(1))
    else:
        body_start = len(lines)

    body = "\n".join(lines[body_start:]).strip()
    if not body:
        raise ConfigurationError(f"prompt template {path} is empty")
    return body, version


def render_template(template: str, values: Dict[str, object]) -> str:
    """Literal {placeholder} replacement; other braces (JSON examples) are left alone"""
    def substitute(match: re.Match) -> str:
        name = match.group(1)
        if name in PLACEHOLDERS and name in values:
            return str(values[name])
        return match.group(0)

    # single pass, so substituted text is never rescanned
    return _PLACEHOLDER.sub(substitute, template)


class PromptLibrary:
    """All six role templates from one directory"""

    def __init__(self, directory: Optional[str] = None):
        self.directory = directory or DEFAULT_PROMPTS_DIR
        self.templates: Dict[RoleTag, PromptTemplate] = {}
        for role_tag in RoleTag:
            system, system_version = _read_template(os.path.join(self.directory, f"{role_tag.value}.system.txt"))
            user, user_version = _read_template(os.path.join(self.directory, f"{role_tag.value}.user.txt"))
            self.templates[role_tag] = PromptTemplate(role_tag, system, user, max(system_version, user_version))
        logger.debug(f"Loaded {len(self.templates)} prompt templates from {self.directory}")

    def versions(self) -> Dict[str, int]:
        return {role.value: template.version for role, template in self.templates.items()}

    def render(self, role_tag: RoleTag, **values) -> tuple:
        """
        Render one role's prompts

        Returns:
            (system_prompt, user_prompt)
        """
        template = self.templates[role_tag]
        return render_template(template.system, values), render_template(template.user, values)
