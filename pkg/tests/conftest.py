import json

import pytest

from threadsel.corpus import Dialogue


def write_jsonl(path, rows):
    path.write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")
    return path


def dialogue_row(did="d1", texts=("hello there", "hi"), candidates=("ok", "no"), label=0):
    return {
        "id": did,
        "turns": [{"speaker": f"s{i % 2}", "text": t} for i, t in enumerate(texts)],
        "candidates": list(candidates),
        "label": label,
    }


@pytest.fixture
def seven_turn():
    texts = [f"turn number {i}" for i in range(1, 8)]
    return Dialogue.build("seven", [(f"s{i % 3}", t) for i, t in enumerate(texts)], ["reply a", "reply b"], 0)


ACCEPTANCE_LINES: list[str] = []


def record(criterion: int, passed: bool, detail: str) -> bool:
    line = f"{'PASS' if passed else 'FAIL'} criterion {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
