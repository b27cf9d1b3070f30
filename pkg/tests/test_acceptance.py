"""One test per acceptance criterion; each prints a single PASS/FAIL line."""
import pytest

from seqmargin.harness import experiments as ex

CRITERIA = [
    ("1", ex.margin_exactness),
    ("2", ex.smm_limit),
    ("3", ex.implicit_bias),
    ("4", ex.thm33),
    ("5", ex.thm34),
    ("6", ex.loss_bump),
    ("7", ex.random_order),
    ("8", ex.nonsep),
    ("9", ex.oracle_equivalence),
    ("10", ex.hygiene),
]


@pytest.mark.parametrize("num, fn", CRITERIA, ids=[f"criterion_{n}" for n, _ in CRITERIA])
def test_criterion(num, fn, acceptance_log):
    res = fn()
    line = f"criterion {num}: {res.line()}"
    print(line)
    acceptance_log.append(line)
    assert res.passed, line
