from __future__ import annotations

import pytest

from combqtt.acceptance import CRITERIA, run_criterion

pytestmark = pytest.mark.slow


@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number, capsys):
    result = run_criterion(number)
    with capsys.disabled():
        print("\n" + result.line())
    assert result.passed, result.line()
