# hyperrag/prompting.py
from __future__ import annotations

from pathlib import Path
from typing import Any, List, Optional

from jinja2 import ChoiceLoader, Environment, FileSystemLoader, StrictUndefined, TemplateError

from .errors import ConfigError

TPL_DIR = Path(__file__).parent / "templates"

EXTRACT = "extract.j2"
REPAIR = "repair.j2"
GENERATE = "generate.j2"
JUDGE = "judge.j2"


class PromptLibrary:
    """
    Jinja2 prompt templates. Files in ``prompts_dir`` shadow the shipped
    defaults of the same name; undefined placeholders raise.
    """

    def __init__(self, prompts_dir: Optional[str] = None):
        loaders: List[FileSystemLoader] = []
        if prompts_dir:
            loaders.append(FileSystemLoader(prompts_dir))
        loaders.append(FileSystemLoader(str(TPL_DIR)))
        self.env = Environment(
            loader=ChoiceLoader(loaders),
            undefined=StrictUndefined,
            keep_trailing_newline=False,
            autoescape=False,
        )

    def render(self, name: str, **values: Any) -> str:
        try:
            return self.env.get_template(name).render(**values).strip()
        except TemplateError as e:
            raise ConfigError(f"prompt template {name}: {e}") from e
