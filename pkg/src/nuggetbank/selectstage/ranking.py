"""Nugget orderings and top-k bank selection."""

from __future__ import annotations

import random
from dataclasses import asdict, dataclass, replace
from typing import Mapping, Sequence

from ..model import (
    ContractError,
    NuggetBank,
    QANugget,
    QualityVector,
    SelectionMethod,
    fingerprint,
)
from .svm import SvmModel


@dataclass(frozen=True)
class SelectionConfig:
    method: SelectionMethod = SelectionMethod.DOGMATIQ
    cap: int = 20
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "method", SelectionMethod(self.method))
        if self.cap < 1:
            raise ValueError("cap must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    def to_record(self) -> dict:
        rec = asdict(self)
        rec["method"] = self.method.value
        return rec


def rank_dogmatiq(
    nuggets: Sequence[QANugget],
    vectors: Mapping[str, QualityVector],
    model: SvmModel,
) -> list[str]:
    """Descending SVM decision value; ties by nugget_id."""
    ids = [n.nugget_id for n in nuggets]
    missing = [i for i in ids if i not in vectors]
    if missing:
        raise ContractError(f"no quality vector for {missing[:3]}")
    if not ids:
        return []
    scores = model.decision_function([vectors[i] for i in ids])
    return [i for _, i in sorted(zip((-float(s) for s in scores), ids))]


def rank_common(nuggets: Sequence[QANugget]) -> list[str]:
    """Most frequent first: cluster size, then grounding documents, then id."""
    return [
        n.nugget_id
        for n in sorted(
            nuggets,
            key=lambda n: (-n.provenance.cluster_size, -n.provenance.grounding_doc_count, n.nugget_id),
        )
    ]


def rank_sample(nuggets: Sequence[QANugget], seed: int) -> list[str]:
    ids = sorted(n.nugget_id for n in nuggets)
    random.Random(seed).shuffle(ids)
    return ids


def vectors_from_provenance(nuggets: Sequence[QANugget]) -> dict[str, QualityVector]:
    return {n.nugget_id: n.provenance.criteria for n in nuggets if n.provenance.criteria is not None}


def select(
    nuggets: Sequence[QANugget],
    config: SelectionConfig,
    model: SvmModel | None = None,
    vectors: Mapping[str, QualityVector] | None = None,
    config_fingerprint: str | None = None,
) -> NuggetBank:
    if not nuggets:
        raise ContractError("cannot select from an empty candidate pool")
    topics = {n.topic_id for n in nuggets}
    if len(topics) != 1:
        raise ContractError(f"candidates span several topics: {sorted(topics)}")
    if len({n.nugget_id for n in nuggets}) != len(nuggets):
        raise ContractError("duplicate nugget ids among candidates")
    if config.method is SelectionMethod.DOGMATIQ:
        if model is None:
            raise ContractError("the quality-criteria method needs a trained SVM model")
        order = rank_dogmatiq(nuggets, vectors if vectors is not None else vectors_from_provenance(nuggets), model)
    elif config.method is SelectionMethod.COMMON:
        order = rank_common(nuggets)
    else:
        order = rank_sample(nuggets, config.seed)

    chosen = {nid: r for r, nid in enumerate(order[: config.cap], 1)}
    stamped = {}
    for n in nuggets:
        prov = replace(n.provenance, selection_method=config.method, selection_rank=chosen.get(n.nugget_id))
        stamped[n.nugget_id] = replace(n, provenance=prov)
    if config_fingerprint is None:
        config_fingerprint = fingerprint(
            {"selection": config.to_record(), "model": model.training_fingerprint if model else None}
        )
    return NuggetBank(
        topic_id=topics.pop(),
        selected=tuple(stamped[i] for i in order[: config.cap]),
        candidates=tuple(stamped[i] for i in sorted(stamped)),
        method=config.method,
        config_fingerprint=config_fingerprint,
        cap=config.cap,
    )
