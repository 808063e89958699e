"""Prompt templates shipped as text assets under ``nuggetbank/templates``.

A template file starts with a ``#! version=N`` line followed by the prompt
body with ``{name}`` placeholders. ``<id>.exemplars.txt``, when present, is
bound to the ``{exemplars}`` slot so few-shot material can be swapped
without touching the instructions.
"""

from __future__ import annotations

import string
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

from ..model import CRITERION_RANGES, PROMPTED_CRITERIA

BASE_TEMPLATES = (
    "summarize",
    "generate_qa",
    "verify_paraphrase",
    "canonical_question",
    "validate_answers",
    "assign_aggregator",
    "judge_nugget",
)

CRITERION_DEFINITIONS: dict[str, str] = {
    "vitality": "Is this information vital, i.e. must any adequate report on the request include it? 1 = vital, 0 = optional.",
    "goal_match": "How well does the nugget serve the user's stated goal?",
    "background_match": "How well does the nugget suit the user's background knowledge?",
    "role_match": "How relevant is the nugget to the user's role?",
    "communication_match": "How well does the nugget fit the user's preferred communication style?",
    "scope_match": "How well does the nugget fall within the scope the user asked for?",
    "personalization_overall": "Overall, how well is the nugget tailored to this particular user?",
    "fluency": "How fluent and grammatical is the question?",
    "clarity": "How clear and easy to understand is the question?",
    "ambiguity": "How ambiguous is the question (5 = highly ambiguous)?",
    "relevance": "How relevant is the nugget to the request?",
    "incompleteness": "How incomplete is the question, i.e. missing context needed to answer it (5 = very incomplete)?",
    "assumptiveness": "How strongly does the question rest on unstated assumptions (5 = very assumptive)?",
    "multifaceted": "How many distinct facets does the question touch (5 = many)?",
    "knowledge_intensiveness": "How much specialised knowledge is needed to answer it (5 = a great deal)?",
    "subjectiveness": "How subjective is the question (5 = entirely a matter of opinion)?",
    "reasoning_intensiveness": "How much reasoning is needed beyond looking up a fact (5 = a great deal)?",
}

FORMAT_HINTS: dict[str, str] = {
    "summarize": "Output only the summary text.",
    "generate_qa": "Output 1 to 6 blocks, each an 'A: <answer>' line followed by a 'Q: <question>' line.",
    "verify_paraphrase": "Reply with exactly YES or NO.",
    "canonical_question": "Copy one of the listed questions verbatim.",
    "validate_answers": "Reply exactly 'REMOVE: <numbers>' or 'REMOVE: NONE'.",
    "assign_aggregator": "Reply with exactly AND or OR.",
    "judge_nugget": "Reply with exactly YES or NO.",
    "criterion": "Reply with a single number and nothing else.",
}

TEMPLATE_IDS: tuple[str, ...] = BASE_TEMPLATES + tuple(f"criterion_{c}" for c in PROMPTED_CRITERIA)


class TemplateError(KeyError):
    pass


@dataclass(frozen=True)
class Template:
    template_id: str
    version: int
    body: str

    @property
    def placeholders(self) -> frozenset[str]:
        return frozenset(f for _, f, _, _ in string.Formatter().parse(self.body) if f)

    def render(self, variables: dict[str, str]) -> str:
        missing = self.placeholders - variables.keys()
        if missing:
            raise TemplateError(f"{self.template_id}: unbound placeholders {sorted(missing)}")
        return self.body.format_map(variables)


def _read_asset(name: str, root: Path | None) -> str | None:
    if root is not None:
        p = root / name
        return p.read_text(encoding="utf-8") if p.exists() else None
    res = resources.files("nuggetbank").joinpath("templates", name)
    return res.read_text(encoding="utf-8") if res.is_file() else None


def _parse_asset(template_id: str, text: str) -> Template:
    first, _, rest = text.partition("\n")
    version = 0
    if first.startswith("#!"):
        for tok in first[2:].split():
            if tok.startswith("version="):
                version = int(tok.split("=", 1)[1])
        text = rest
    return Template(template_id, version, text.rstrip("\n") + "\n")


def _scale_text(name: str) -> str:
    lo, hi = CRITERION_RANGES[name]
    if name == "vitality":
        return "0 or 1"
    return f"{lo:.1f} to {hi:.1f}"


@lru_cache(maxsize=None)
def load_template(template_id: str, root: str | None = None) -> Template:
    base = Path(root) if root else None
    if template_id.startswith("criterion_"):
        name = template_id[len("criterion_"):]
        if name not in CRITERION_DEFINITIONS:
            raise TemplateError(f"unknown criterion template {template_id!r}")
        raw = _read_asset("criterion.txt", base)
        tpl = _parse_asset(template_id, raw)
        # bake the criterion-specific slots; escape braces in the definitions
        baked = tpl.body.replace("{criterion_title}", name.replace("_", " ").title())
        baked = baked.replace("{criterion_definition}", CRITERION_DEFINITIONS[name].replace("{", "{{").replace("}", "}}"))
        baked = baked.replace("{criterion_scale}", _scale_text(name))
        return Template(template_id, tpl.version, baked)
    if template_id not in BASE_TEMPLATES:
        raise TemplateError(f"unknown template {template_id!r}")
    raw = _read_asset(f"{template_id}.txt", base)
    if raw is None:
        raise TemplateError(f"template asset for {template_id!r} not found")
    tpl = _parse_asset(template_id, raw)
    if "exemplars" in tpl.placeholders:
        ex = _read_asset(f"{template_id}.exemplars.txt", base) or ""
        body = tpl.body.replace("{exemplars}", ex.strip().replace("{", "{{").replace("}", "}}"))
        tpl = Template(template_id, tpl.version, body)
    return tpl


def template_versions(root: str | None = None) -> dict[str, int]:
    return {t: load_template(t, root).version for t in TEMPLATE_IDS}
