import pytest

from evpay.ledger import create_genesis
from evpay.rng import Xoshiro256
from evpay.wallet import Wallet


def make_wallets(n, tag="w"):
    return [Wallet.derive(99, f"{tag}{i}") for i in range(n)]


@pytest.fixture
def wallets():
    return make_wallets(4)


@pytest.fixture
def rng():
    return Xoshiro256(2024)


@pytest.fixture
def funded(wallets):
    """Ledger at difficulty 8 with 1000 tokens on each of four wallets."""
    return create_genesis([(w.address, 1000) for w in wallets], difficulty=8)


# one pass/fail line per acceptance criterion in the terminal summary
_acceptance: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        _acceptance[report.nodeid] = "PASS" if report.passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    rows = []
    for nodeid, outcome in _acceptance.items():
        number, _, title = nodeid.split("test_criterion_")[1].partition("_")
        rows.append((int(number), title.replace("_", " "), outcome))
    for number, title, outcome in sorted(rows):
        terminalreporter.write_line(f"criterion {number} ({title}): {outcome}")
