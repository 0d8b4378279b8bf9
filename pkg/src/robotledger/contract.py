"""Robot access-control contract.

Robots are ledger assets under ``robot/<name>``.  Users acquire a robot
before publishing to it; the publish path (``set``) checks authorization
inside the transaction, so a rejected publish never reaches ordering.

Every function reads and writes only through the :class:`TxContext` it is
given.  Concurrency safety comes from the ledger's read-set validation.
"""

from __future__ import annotations

import base64
import binascii
import inspect
import json
from dataclasses import asdict, dataclass, replace
from enum import Enum
from typing import Any, Callable, Sequence

from .errors import (
    AuthenticationError,
    AuthorizationError,
    ConflictError,
    ContractError,
    NotFoundError,
    StateError,
    ValidationError,
)
from .identity import Certificate, Membership, validate_attribute
from .ledger import TxContext

NOT_AUTHORIZED = "Client not authorized"


def robot_key(robot_id: str) -> str:
    return f"robot/{robot_id}"


def message_prefix(robot_id: str) -> str:
    return f"msg/{robot_id}/"


class OperationMode(str, Enum):
    EXCLUSIVE = "exclusive"
    OPEN = "open"


@dataclass(frozen=True)
class ClientIdentity:
    subject_id: str
    org_id: str
    attributes: frozenset[str]

    def has(self, attribute: str) -> bool:
        return attribute in self.attributes


def get_client_identity(cert: Certificate, membership: Membership) -> ClientIdentity:
    if not membership.verify(cert):
        raise AuthenticationError(f"certificate for {cert.subject_id!r} does not verify")
    return ClientIdentity(cert.subject_id, cert.org_id, frozenset(cert.attributes))


@dataclass(frozen=True)
class RobotAsset:
    name: str
    sub_topic: str
    pub_topic: str
    operator: str = ""
    under_op: bool = False
    mode: OperationMode = OperationMode.EXCLUSIVE
    required_attribute: str = ""
    subscribe_attribute: str = ""

    @classmethod
    def from_descriptor(cls, d: dict) -> "RobotAsset":
        name = d.get("name") or d.get("Name")
        if not isinstance(name, str) or not name or "/" in name:
            raise ValidationError(f"invalid robot name: {name!r}")
        try:
            mode = OperationMode(d.get("mode", "exclusive"))
        except ValueError:
            raise ValidationError(f"robot {name}: unknown mode {d.get('mode')!r}") from None
        required = validate_attribute(d.get("required_attribute") or name.lower())
        subscribe = d.get("subscribe_attribute") or ""
        if subscribe:
            validate_attribute(subscribe)
        return cls(
            name=name,
            sub_topic=d.get("sub_topic") or f"/{name}/cmd_vel",
            pub_topic=d.get("pub_topic") or f"/{name}/pose",
            mode=mode,
            required_attribute=required,
            subscribe_attribute=subscribe,
        )

    # JSON tags follow the original chaincode struct; Operator is tagged "owner".
    def to_json(self) -> bytes:
        doc = {
            "Name": self.name,
            "SubTopic": self.sub_topic,
            "PubTopic": self.pub_topic,
            "owner": self.operator,
            "UnderOp": self.under_op,
            "Mode": self.mode.value,
            "RequiredAttribute": self.required_attribute,
            "SubscribeAttribute": self.subscribe_attribute,
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()

    @classmethod
    def from_json(cls, raw: bytes) -> "RobotAsset":
        doc = json.loads(raw)
        return cls(
            name=doc["Name"],
            sub_topic=doc["SubTopic"],
            pub_topic=doc["PubTopic"],
            operator=doc["owner"],
            under_op=doc["UnderOp"],
            mode=OperationMode(doc["Mode"]),
            required_attribute=doc["RequiredAttribute"],
            subscribe_attribute=doc.get("SubscribeAttribute", ""),
        )

    @property
    def publish_topic(self) -> str:
        # commands flow into exclusive robots; open services publish their output
        return self.sub_topic if self.mode is OperationMode.EXCLUSIVE else self.pub_topic


class ModePolicy:
    """Per-mode acquire/authorize rules.

    New modes (e.g. k publishers at once) plug in by subclassing and
    registering in ``POLICIES``.
    """

    def acquire(self, robot: RobotAsset, caller: ClientIdentity) -> tuple[bool, RobotAsset | None]:
        raise NotImplementedError

    def authorize(self, robot: RobotAsset, caller: ClientIdentity) -> bool:
        raise NotImplementedError


class ExclusivePolicy(ModePolicy):
    def acquire(self, robot, caller):
        if robot.under_op:
            return False, None
        attribute = robot.required_attribute
        if caller.has(attribute):
            return True, replace(robot, under_op=True, operator=caller.subject_id)
        return False, None

    def authorize(self, robot, caller):
        return robot.under_op and robot.operator == caller.subject_id


class OpenPolicy(ModePolicy):
    def acquire(self, robot, caller):
        return caller.has(robot.required_attribute), None

    def authorize(self, robot, caller):
        return caller.has(robot.required_attribute)


POLICIES: dict[OperationMode, ModePolicy] = {
    OperationMode.EXCLUSIVE: ExclusivePolicy(),
    OperationMode.OPEN: OpenPolicy(),
}


def encode_message(robot: RobotAsset, publisher: str, payload: bytes, publish_ms: float) -> bytes:
    doc = {
        "robot": robot.name,
        "topic": robot.publish_topic,
        "publisher": publisher,
        "payload": base64.b64encode(payload).decode(),
        "publish_ms": publish_ms,
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()


class RobotContract:
    """The access-control contract.

    ``gated=False`` gives the plain event-driven contract whose ``set``
    skips the authorization check; everything else is identical.
    """

    def __init__(self, gated: bool = True, admin_org: str = "Org1", admin_attribute: str = "admin"):
        self.gated = gated
        self.admin_org = admin_org
        self.admin_attribute = admin_attribute
        self._functions: dict[str, Callable[..., Any]] = {
            "setup": self.setup,
            "acquire": self.acquire,
            "release": self.release,
            "authorize": self.authorize,
            "set": self.set,
        }

    def invoke(self, ctx: TxContext, function: str, args: Sequence[str]) -> Any:
        fn = self._functions.get(function)
        if fn is None:
            raise ContractError(f"unknown function {function!r}")
        caller = get_client_identity(ctx.creator, ctx.membership)
        try:
            inspect.signature(fn).bind(ctx, caller, *args)
        except TypeError as exc:
            raise ValidationError(f"{function}: bad arguments {list(args)!r}") from exc
        return fn(ctx, caller, *args)

    def is_admin(self, caller: ClientIdentity) -> bool:
        return caller.org_id == self.admin_org and caller.has(self.admin_attribute)

    @staticmethod
    def read_robot(ctx: TxContext, robot_id: str) -> RobotAsset:
        raw = ctx.get_state(robot_key(robot_id))
        if raw is None:
            raise NotFoundError(f"robot {robot_id!r} does not exist")
        return RobotAsset.from_json(raw)

    @staticmethod
    def write_robot(ctx: TxContext, robot: RobotAsset) -> None:
        ctx.put_state(robot_key(robot.name), robot.to_json())

    # -- contract functions ---------------------------------------------

    def setup(self, ctx: TxContext, caller: ClientIdentity, robots_json: str) -> None:
        if not self.is_admin(caller):
            raise AuthorizationError(f"setup requires {self.admin_attribute!r} of {self.admin_org}")
        try:
            descriptors = json.loads(robots_json)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"setup: invalid robot list: {exc.msg}") from exc
        if not isinstance(descriptors, list):
            raise ValidationError("setup: expected a JSON list of robots")
        seen = set()
        for d in descriptors:
            if not isinstance(d, dict):
                raise ValidationError("setup: each robot must be an object")
            robot = RobotAsset.from_descriptor(d)
            if robot.name in seen or ctx.get_state(robot_key(robot.name)) is not None:
                raise ConflictError(f"robot {robot.name!r} already exists")
            seen.add(robot.name)
            self.write_robot(ctx, robot)

    def acquire(self, ctx: TxContext, caller: ClientIdentity, robot_id: str) -> bool:
        robot = self.read_robot(ctx, robot_id)
        granted, updated = POLICIES[robot.mode].acquire(robot, caller)
        if updated is not None:
            self.write_robot(ctx, updated)
        return granted

    def release(self, ctx: TxContext, caller: ClientIdentity, robot_id: str) -> None:
        robot = self.read_robot(ctx, robot_id)
        if not robot.under_op:
            raise StateError(f"robot {robot_id!r} is not under operation")
        if robot.operator != caller.subject_id and not self.is_admin(caller):
            raise AuthorizationError(f"{caller.subject_id!r} is not the operator of {robot_id!r}")
        self.write_robot(ctx, replace(robot, under_op=False, operator=""))

    def authorize(self, ctx: TxContext, caller: ClientIdentity, robot_id: str) -> bool:
        robot = self.read_robot(ctx, robot_id)
        return POLICIES[robot.mode].authorize(robot, caller)

    def set(self, ctx: TxContext, caller: ClientIdentity, robot_id: str, payload_b64: str) -> None:
        robot = self.read_robot(ctx, robot_id)
        if self.gated and not POLICIES[robot.mode].authorize(robot, caller):
            raise AuthorizationError(NOT_AUTHORIZED)
        try:
            payload = base64.b64decode(payload_b64, validate=True)
        except (binascii.Error, ValueError) as exc:
            raise ValidationError("set: payload is not base64") from exc
        ctx.append_state(message_prefix(robot_id), encode_message(robot, caller.subject_id, payload, ctx.timestamp_ms))


def robot_descriptor(asset: RobotAsset) -> dict:
    d = asdict(asset)
    d["mode"] = asset.mode.value
    for k in ("operator", "under_op"):
        d.pop(k)
    return d
