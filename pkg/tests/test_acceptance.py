"""The twelve acceptance criteria at desk scale (N = 1000), pinned tolerances.

Each test prints one PASS/FAIL line with the measured quantities.
"""

import pytest

from contact_hj import checks


@pytest.mark.slow
@pytest.mark.parametrize("number", range(1, 13))
def test_criterion(number, capsys):
    result = checks.CRITERIA[number - 1]()
    with capsys.disabled():
        print(f"\n{result.line()} ({result.seconds:.1f} s)")
    assert result.passed, result.to_dict()
