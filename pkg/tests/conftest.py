import pytest


class StubCtx:
    """Stand-in for NodeContext when driving a protocol by hand."""

    def __init__(self, node_id, accept=True):
        self.node_id = node_id
        self.accept = accept
        self.sent = []
        self.decided = []
        self.notes = []

    def broadcast(self, payload):
        if self.accept:
            self.sent.append(payload)
        return self.accept

    def decide(self, value):
        self.decided.append(value)

    def note(self, kind, **data):
        self.notes.append((kind, data))


@pytest.fixture
def stub_ctx():
    return StubCtx


_ACCEPTANCE_LINES = []


@pytest.fixture
def record_criterion():
    """Record one acceptance line; printed now and again in the summary."""

    def record(number, title, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title}" + (f" | {detail}" if detail else "")
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
