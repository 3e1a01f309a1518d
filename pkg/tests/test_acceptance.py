"""Acceptance criteria 1-10, each at its stated tolerance.

Prints one ``[PASS]``/``[FAIL]`` line per criterion. Run alone with
``pytest tests/test_acceptance.py -v`` or ``python3 tests/test_acceptance.py``.
"""
import pytest

from maganomaly.validation import CRITERIA

RUNTIME_LIMITS = {1: 30, 2: 120, 4: 300, 7: 600}


@pytest.mark.acceptance
@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number, capsys):
    result = CRITERIA[number]()
    with capsys.disabled():
        print("\n" + result.line())
    assert result.passed, result.line()
    limit = RUNTIME_LIMITS.get(number)
    if limit is not None:
        assert result.seconds <= limit, f"criterion {number} took {result.seconds:.1f} s (limit {limit} s)"


if __name__ == "__main__":
    for n in sorted(CRITERIA):
        print(CRITERIA[n]().line(), flush=True)
