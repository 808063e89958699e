import shutil
from pathlib import Path

import pytest

from nuggetbank.model import Aggregator, Answer, CandidateNugget, Provenance, QANugget, Topic
from nuggetbank.providers import ChatClient, EmbedClient, MockChat, ProviderConfig, ScriptedResponder, TableEmbedder

FIXTURES = Path(__file__).parent / "fixtures"


def mock_config(**kw) -> ProviderConfig:
    kw.setdefault("retry_backoff", 0.0)
    return ProviderConfig(kind="mock", model_name=kw.pop("model_name", "mock"), **kw)


def scripted_client(**kw) -> ChatClient:
    cfg = mock_config(**kw)
    backend = MockChat(responder=ScriptedResponder(), fail_rate=cfg.fail_rate, fail_seed=cfg.fail_seed)
    return ChatClient(cfg, backend, sleep=lambda s: None)


def responder_client(fn, **kw) -> ChatClient:
    """Client whose backend answers every prompt with ``fn(request)``."""
    cfg = mock_config(**kw)
    return ChatClient(cfg, MockChat(responder=lambda req, prompt: fn(req)), sleep=lambda s: None)


def table_embedder(table) -> EmbedClient:
    return EmbedClient(mock_config(), TableEmbedder(table))


def make_nugget(nid, answers, question=None, members=None, aggregator="OR", topic="T1"):
    answers = tuple(a if isinstance(a, Answer) else Answer(a[0], tuple(a[1])) for a in answers)
    question = question or f"Question {nid}?"
    members = tuple(members or (question,))
    docs = {d for a in answers for d in a.doc_ids}
    return QANugget(
        nugget_id=nid,
        topic_id=topic,
        question=question,
        aggregator=Aggregator(aggregator),
        answers=answers,
        provenance=Provenance(members, len(members), len(docs)),
    )


def make_candidate(nid, question, answer, doc, topic="T1"):
    return CandidateNugget(nid, topic, question, (Answer(answer, (doc,)),), doc)


@pytest.fixture
def topic():
    return Topic("T1", "Statue", "Describe the Statue of Liberty.")


@pytest.fixture
def e2e_dir(tmp_path):
    """A private copy of the shipped end-to-end fixture (inputs only)."""
    src = FIXTURES / "e2e"
    dst = tmp_path / "e2e"
    shutil.copytree(src, dst, ignore=shutil.ignore_patterns("out", "golden"))
    return dst


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
