import numpy as np
import pytest

from p2pbackup.sched import BACKUP, TransferProblem
from p2pbackup.trace import AvailabilityMatrix


def make_matrix(rows, slot_seconds=3600.0, peer_ids=None):
    """Build an availability matrix from '0'/'1' strings, one row per peer."""
    bits = np.array([[int(c) for c in row] for row in rows], dtype=np.uint8)
    return AvailabilityMatrix(bits=bits, slot_seconds=slot_seconds, peer_ids=peer_ids)


# Worked example used throughout: the owner p0 backs up to three peers whose
# sessions barely overlap, so the optimum needs three distinct overlap slots.
FIG_ROWS = (
    "11100111",  # p0, the data owner
    "11000000",  # p1
    "10000010",  # p2
    "00100000",  # p3
)


@pytest.fixture
def fig_matrix():
    return make_matrix(FIG_ROWS)


@pytest.fixture
def fig_problem(fig_matrix):
    return TransferProblem(matrix=fig_matrix, owner=0, direction=BACKUP, x=3)


@pytest.fixture(scope="session")
def flat_cdf_file(tmp_path_factory):
    """Degenerate one-point bandwidth table: every peer uploads at 100 kB/s."""
    path = tmp_path_factory.mktemp("bw") / "flat.csv"
    path.write_text("0.5,100000\n")
    return str(path)


@pytest.fixture(scope="session")
def spread_cdf_file(tmp_path_factory):
    """Moderate empirical bandwidth table (quantile, uplink bytes/s)."""
    path = tmp_path_factory.mktemp("bw") / "spread.csv"
    path.write_text(
        "0.05,30000\n"
        "0.25,55000\n"
        "0.5,77000\n"
        "0.75,120000\n"
        "0.95,250000\n"
    )
    return str(path)
