import pytest

# filled by test_acceptance; one (number, passed, text) entry per criterion
ACCEPTANCE: list[tuple[int, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num, ok, text in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  [{num:2d}] {text}")


@pytest.fixture
def record_criterion():
    def record(num: int, ok: bool, text: str) -> None:
        ACCEPTANCE.append((num, bool(ok), text))
        print(f"{'PASS' if ok else 'FAIL'}  [{num:2d}] {text}")
        assert ok, text

    return record
