"""Pipeline configuration: one TOML file, ``${VAR}`` interpolation, per-stage
providers and stage-slice fingerprints."""

from __future__ import annotations

import os
import re
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .clusterstage import ClusterConfig
from .evalharness import MissingPolicy
from .genstage import Stage1Config
from .model import ContractError, fingerprint
from .providers import ProviderConfig
from .rankstats import WpaConfig
from .selectstage import SelectionConfig, SvmHyperparams

PROVIDER_STAGES = ("stage1", "stage2a", "embed", "stage2b", "stage3", "judge")
_VAR = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")


class ConfigError(ContractError):
    pass


def interpolate(value: Any, env: Mapping[str, str]) -> Any:
    """Replace ``${NAME}`` in every string; unknown names are an error."""
    if isinstance(value, str):

        def sub(m):
            if m.group(1) not in env:
                raise ConfigError(f"environment variable {m.group(1)} is not set")
            return env[m.group(1)]

        return _VAR.sub(sub, value)
    if isinstance(value, dict):
        return {k: interpolate(v, env) for k, v in value.items()}
    if isinstance(value, list):
        return [interpolate(v, env) for v in value]
    return value


@dataclass(frozen=True)
class Paths:
    input_dir: Path = Path(".")
    output_dir: Path = Path("out")
    svm_model: Path | None = None
    uninformative_pattern_file: Path | None = None

    @property
    def topics(self) -> Path:
        return self.input_dir / "topics.jsonl"

    @property
    def documents(self) -> Path:
        return self.input_dir / "documents.jsonl"

    @property
    def ranking(self) -> Path:
        return self.input_dir / "ranking.jsonl"

    @property
    def reports(self) -> Path:
        return self.input_dir / "reports.jsonl"


@dataclass(frozen=True)
class PipelineConfig:
    providers: Mapping[str, ProviderConfig] = field(default_factory=lambda: {"default": ProviderConfig()})
    stage1: Stage1Config = Stage1Config()
    cluster: ClusterConfig = ClusterConfig()
    selection: SelectionConfig = SelectionConfig()
    svm: SvmHyperparams = SvmHyperparams()
    wpa: WpaConfig = WpaConfig()
    missing_policy: MissingPolicy = MissingPolicy.ZERO
    paths: Paths = Paths()
    seed: int = 0
    parallelism: int = 1

    def provider(self, stage: str) -> ProviderConfig:
        if stage not in PROVIDER_STAGES:
            raise ConfigError(f"unknown provider stage {stage!r}")
        if stage in self.providers:
            return self.providers[stage]
        if "default" in self.providers:
            return self.providers["default"]
        raise ConfigError(f"no provider for stage {stage} and no default")

    @property
    def top_k_docs(self) -> int:
        return self.stage1.top_k_docs

    def to_record(self) -> dict:
        """Canonical form; paths are excluded so moving a checkout keeps fingerprints."""
        return {
            "providers": {k: v.to_record() for k, v in sorted(self.providers.items())},
            "stage1": self.stage1.to_record(),
            "cluster": self.cluster.to_record(),
            "selection": self.selection.to_record(),
            "svm": self.svm.to_record(),
            "wpa": self.wpa.to_record(),
            "missing_policy": self.missing_policy.value,
            "seed": self.seed,
        }

    @property
    def fingerprint(self) -> str:
        return fingerprint(self.to_record())

    def with_overrides(self, **kw) -> "PipelineConfig":
        return replace(self, **kw)

    def validate_paths(self, need_reports: bool = False) -> list[str]:
        missing = []
        for p in (self.paths.topics, self.paths.documents, self.paths.ranking):
            if not p.exists():
                missing.append(str(p))
        if need_reports and not self.paths.reports.exists():
            missing.append(str(self.paths.reports))
        for p in (self.paths.svm_model, self.paths.uninformative_pattern_file):
            if p is not None and not p.exists():
                missing.append(str(p))
        return missing


_SECTIONS = {"seed", "parallelism", "paths", "providers", "stage1", "cluster", "selection", "svm", "wpa", "evaluation"}


def _build(cls, rec: Mapping, section: str):
    try:
        return cls(**dict(rec))
    except TypeError as exc:
        raise ConfigError(f"[{section}] {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"[{section}] {exc}") from None


def config_from_mapping(raw: Mapping, base_dir: Path = Path("."), env: Mapping[str, str] | None = None) -> PipelineConfig:
    raw = interpolate(dict(raw), os.environ if env is None else env)
    unknown = set(raw) - _SECTIONS
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}")

    def path(v):
        if v is None:
            return None
        p = Path(v)
        return p if p.is_absolute() else base_dir / p

    praw = dict(raw.get("paths", {}))
    bad = set(praw) - {"input_dir", "output_dir", "svm_model", "uninformative_pattern_file"}
    if bad:
        raise ConfigError(f"unknown [paths] keys {sorted(bad)}")
    paths = Paths(
        input_dir=path(praw.get("input_dir", ".")),
        output_dir=path(praw.get("output_dir", "out")),
        svm_model=path(praw.get("svm_model")),
        uninformative_pattern_file=path(praw.get("uninformative_pattern_file")),
    )
    providers = {}
    for stage, rec in raw.get("providers", {"default": {}}).items():
        if stage != "default" and stage not in PROVIDER_STAGES:
            raise ConfigError(f"unknown provider stage {stage!r}")
        rec = dict(rec)
        if rec.get("cache_dir"):
            rec["cache_dir"] = str(path(rec["cache_dir"]))
        try:
            providers[stage] = ProviderConfig.from_record(rec)
        except ValueError as exc:
            raise ConfigError(f"[providers.{stage}] {exc}") from None
    seed = int(raw.get("seed", 0))
    sel = dict(raw.get("selection", {}))
    sel.setdefault("seed", seed)
    evaluation = dict(raw.get("evaluation", {}))
    try:
        policy = MissingPolicy(evaluation.pop("missing_policy", "zero"))
    except ValueError as exc:
        raise ConfigError(f"[evaluation] {exc}") from None
    if evaluation:
        raise ConfigError(f"unknown [evaluation] keys {sorted(evaluation)}")
    parallelism = int(raw.get("parallelism", 1))
    if parallelism < 1:
        raise ConfigError("parallelism must be >= 1")
    return PipelineConfig(
        providers=providers,
        stage1=_build(Stage1Config, raw.get("stage1", {}), "stage1"),
        cluster=_build(ClusterConfig, raw.get("cluster", {}), "cluster"),
        selection=_build(SelectionConfig, sel, "selection"),
        svm=_build(SvmHyperparams, raw.get("svm", {}), "svm"),
        wpa=_build(WpaConfig, raw.get("wpa", {}), "wpa"),
        missing_policy=policy,
        paths=paths,
        seed=seed,
        parallelism=parallelism,
    )


def load_config(path: str | os.PathLike, env: Mapping[str, str] | None = None) -> PipelineConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_mapping(raw, path.resolve().parent, env)
