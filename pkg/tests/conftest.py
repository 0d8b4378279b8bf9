import json

import pytest

from robotledger.contract import RobotContract
from robotledger.identity import Membership, create_ca, issue_certificate
from robotledger.ledger import Ledger, OrderingConfig, VirtualClock
from robotledger.scenario import two_task_scenario
from robotledger.simulation import run_scenario


class Net:
    """A small two-org deployment with robots already set up and committed."""

    def __init__(self, robots=("Husky", "Turtlebot4", "OptiTrack"), gated=True, config=None, seed=7,
                 open_robots=("OptiTrack",)):
        self.ca1 = create_ca("Org1", seed=seed)
        self.ca2 = create_ca("Org2", seed=seed)
        self.membership = Membership.from_cas([self.ca1, self.ca2])
        self.clock = VirtualClock(0.0)
        self.contract = RobotContract(gated=gated)
        self.ledger = Ledger(self.contract, self.membership, config or OrderingConfig(), self.clock)
        self.admin = issue_certificate(self.ca1, "admin", {"admin"})
        self.salma = issue_certificate(self.ca1, "salma", {"turtlebot4", "husky", "optitrack"})
        self.farhad = issue_certificate(self.ca1, "farhad", {"turtlebot4"})
        self.outsider = issue_certificate(self.ca2, "eve", set())
        if robots:
            desc = [{"name": r, "mode": "open" if r in open_robots else "exclusive"} for r in robots]
            self.commit("setup", [json.dumps(desc)], self.admin)

    def submit(self, fn, args, cert):
        return self.ledger.transaction(self.ledger.submit(fn, args, cert))

    def commit(self, fn, args, cert):
        """Submit, then run the pipeline dry and move the clock past the commit."""
        tx = self.submit(fn, args, cert)
        self.ledger.flush()
        if tx.commit_ms is not None:
            self.clock.advance_to(max(self.clock.now_ms, tx.commit_ms))
        return tx

    def settle(self):
        self.ledger.flush()
        last = max((b.commit_ms for b in self.ledger.blocks), default=self.clock.now_ms)
        self.clock.advance_to(max(self.clock.now_ms, last))

    def robot(self, name):
        from robotledger.contract import RobotAsset, robot_key
        entry = self.ledger.read_state(robot_key(name))
        return None if entry is None else RobotAsset.from_json(entry[0])


@pytest.fixture
def net():
    return Net()


@pytest.fixture(scope="session")
def two_task_runs():
    """The two-task fixture run once per gating mode and shared across tests."""
    return {g: run_scenario(two_task_scenario(gating=g, seed=0)) for g in (True, False)}


ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
