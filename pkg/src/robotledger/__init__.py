"""Permissioned-ledger access control for shared multi-robot testbeds.

Certificates carry attributes, a chaincode-style contract gates each robot's
command topic, and a discrete-time simulation drives robots from ledger commits.
"""

from .broker import Broker, Measurement, TopicMessage, measure
from .contract import NOT_AUTHORIZED, OperationMode, RobotAsset, RobotContract
from .errors import (AuthenticationError, AuthorizationError, ConflictError, ContractError,
                     NotFoundError, RobotLedgerError, StateError, ValidationError)
from .identity import (Certificate, CertificateAuthority, Membership, create_ca, issue_certificate,
                       verify_certificate)
from .ledger import Ledger, OrderingConfig, VirtualClock
from .scenario import Scenario, load_scenario, two_task_scenario, throughput_scenario
from .simulation import ScenarioResult, run_scenario

__version__ = "0.1.0"

__all__ = [
    "AuthenticationError", "AuthorizationError", "Broker", "Certificate", "CertificateAuthority",
    "ConflictError", "ContractError", "Ledger", "Measurement", "Membership", "NOT_AUTHORIZED",
    "NotFoundError", "OperationMode", "OrderingConfig", "RobotAsset", "RobotContract",
    "RobotLedgerError", "Scenario", "ScenarioResult", "StateError", "TopicMessage",
    "ValidationError", "VirtualClock", "create_ca", "issue_certificate", "load_scenario",
    "measure", "two_task_scenario", "run_scenario", "throughput_scenario", "verify_certificate",
]
