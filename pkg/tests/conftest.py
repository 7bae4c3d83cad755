import pytest


@pytest.fixture
def verdict(capsys):
    """Print one visible pass/fail line per acceptance criterion, then assert."""

    def report(number, title, ok, detail=""):
        with capsys.disabled():
            print(f"\n[criterion {number:2d}] {'PASS' if ok else 'FAIL'} {title}" + (f": {detail}" if detail else ""))
        assert ok, f"criterion {number} failed: {detail}"

    return report
