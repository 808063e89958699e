"""Training-set assembly: negatives are generated nuggets that the paraphrase
path judges distinct from every human-written positive."""

from __future__ import annotations

import random
from typing import Sequence

from ..clusterstage import candidate_pairs, verify_pairs
from ..model import Diagnostics, QANugget
from ..providers import ChatClient, EmbedClient


def mine_negatives(
    positive_questions: Sequence[str],
    generated: Sequence[QANugget],
    embedder: EmbedClient,
    client: ChatClient | None,
    threshold: float = 0.9,
    ratio: int = 5,
    seed: int = 0,
    diagnostics: Diagnostics | None = None,
) -> list[QANugget]:
    """Generated nuggets not verified as paraphrases of any positive.

    At most ``ratio`` negatives per positive are kept, drawn by a seeded
    shuffle and returned in id order.
    """
    if not positive_questions or not generated:
        return []
    gold_ids = [f"gold:{i:06d}" for i in range(len(positive_questions))]
    gen_ids = [f"gen:{n.nugget_id}" for n in generated]
    questions = dict(zip(gold_ids, positive_questions))
    questions.update(zip(gen_ids, (n.question for n in generated)))
    ids = sorted(questions)
    edges = [
        e
        for e in candidate_pairs(ids, [questions[i] for i in ids], embedder, threshold)
        if e.nugget_id_a.startswith("gen:") != e.nugget_id_b.startswith("gen:")
    ]
    if client is not None:
        edges = verify_pairs(edges, questions, client, diagnostics)
    matched = {x for e in edges for x in (e.nugget_id_a, e.nugget_id_b) if x.startswith("gen:")}
    pool = sorted((n for n in generated if f"gen:{n.nugget_id}" not in matched), key=lambda n: n.nugget_id)
    cap = ratio * len(positive_questions)
    if len(pool) > cap:
        rng = random.Random(seed)
        pool = sorted(rng.sample(pool, cap), key=lambda n: n.nugget_id)
    return pool
