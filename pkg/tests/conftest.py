import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

import oracles  # noqa: E402
from netquant import ivqr, qr_core  # noqa: E402

# Every quantile fit made in this process is checked against the
# residual-sign fraction bound; the acceptance module reads the tally.
FIT_LOG = {"fits": 0, "violations": []}

_original_fit = qr_core.qr_fit


def _recording_fit(*args, **kwargs):
    fit = _original_fit(*args, **kwargs)
    FIT_LOG["fits"] += 1
    if not oracles.quantile_fraction_ok(fit):
        FIT_LOG["violations"].append((fit.tau, fit.residuals.size, fit.coefficients.size))
    return fit


@pytest.fixture(autouse=True, scope="session")
def _record_fits():
    mp = pytest.MonkeyPatch()
    mp.setattr(qr_core, "qr_fit", _recording_fit)
    mp.setattr(ivqr, "qr_fit", _recording_fit)
    yield
    mp.undo()


def pytest_collection_modifyitems(config, items):
    # acceptance criteria run last so the fit tally covers the whole suite
    items.sort(key=lambda it: "test_acceptance" in it.nodeid)


# criterion number -> (passed, detail), filled by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
