"""Kinematic multi-robot harness driven through the broker and ledger.

Unicycle robots follow waypoint controllers.  Commands travel as published
messages to the robot and pose feedback travels back from the localization
service, so both directions pick up the ledger's commit latency.  One
virtual clock drives ledger and kinematics; every tick is stepped in the
same order, so identical scenarios give identical results.
"""

from __future__ import annotations

import json
import logging
import math
import struct
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Sequence

import numpy as np

from .broker import Broker, Subscription, TopicMessage
from .contract import RobotContract, robot_descriptor, RobotAsset
from .errors import ContractError, ValidationError
from .identity import Certificate, Membership, create_ca, issue_certificate
from .ledger import Ledger, TxStatus, VirtualClock
from .scenario import (
    ARENA_DEPTH,
    ARENA_HEIGHT,
    ARENA_WIDTH,
    ControllerConfig,
    Scenario,
)

logger = logging.getLogger(__name__)

_CMD = struct.Struct("<dd")


def normalize_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    if -math.pi < a <= math.pi:
        return a  # the modulo below would perturb in-range values by rounding
    a = (a + math.pi) % (2.0 * math.pi) - math.pi
    return math.pi if a == -math.pi else a


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    theta: float = 0.0


@dataclass(frozen=True)
class Arena:
    width: float = ARENA_WIDTH
    depth: float = ARENA_DEPTH
    height: float = ARENA_HEIGHT

    def clamp(self, x: float, y: float) -> tuple[float, float]:
        return min(max(x, 0.0), self.width), min(max(y, 0.0), self.depth)

    def contains(self, x: float, y: float) -> bool:
        return 0.0 <= x <= self.width and 0.0 <= y <= self.depth


@dataclass
class UnicycleRobot:
    robot_id: str
    pose: Pose
    v: float = 0.0
    w: float = 0.0
    v_max: float = 0.31
    w_max: float = 1.9

    def command(self, v: float, w: float) -> None:
        self.v = _clamp(v, self.v_max)
        self.w = _clamp(w, self.w_max)


def _clamp(value: float, limit: float) -> float:
    return max(-limit, min(limit, value))


def step_unicycle(robot: UnicycleRobot, v: float, w: float, dt: float, arena: Arena | None = None) -> Pose:
    """Advance ``robot`` by one explicit Euler step and return the new pose."""
    if not all(math.isfinite(x) for x in (v, w, dt)):
        raise ValidationError("step_unicycle: inputs must be finite")
    if dt <= 0:
        raise ValidationError("step_unicycle: dt must be > 0")
    arena = arena or Arena()
    robot.command(v, w)
    p = robot.pose
    x = p.x + robot.v * math.cos(p.theta) * dt
    y = p.y + robot.v * math.sin(p.theta) * dt
    x, y = arena.clamp(x, y)
    robot.pose = Pose(x, y, normalize_angle(p.theta + robot.w * dt))
    return robot.pose


@dataclass
class WaypointController:
    owner: str
    robot_id: str
    waypoints: Sequence[tuple[float, float]]
    k_lin: float = 0.8
    k_ang: float = 2.0
    v_max: float = 0.31
    w_max: float = 1.9
    arrival_radius: float = 0.1
    rate_hz: float = 50.0
    index: int = 0

    @classmethod
    def from_config(cls, owner: str, robot_id: str, waypoints, cfg: ControllerConfig) -> "WaypointController":
        return cls(owner, robot_id, list(waypoints), cfg.k_lin, cfg.k_ang, cfg.v_max, cfg.w_max,
                   cfg.arrival_radius, cfg.rate_hz)

    @property
    def done(self) -> bool:
        return self.index >= len(self.waypoints)


def control_step(ctrl: WaypointController, pose: Pose) -> tuple[float, float]:
    """Proportional waypoint law; advances ``ctrl.index`` on arrival."""
    while not ctrl.done:
        tx, ty = ctrl.waypoints[ctrl.index]
        dist = math.hypot(tx - pose.x, ty - pose.y)
        if dist > ctrl.arrival_radius:
            break
        ctrl.index += 1
    if ctrl.done:
        return 0.0, 0.0
    err = normalize_angle(math.atan2(ty - pose.y, tx - pose.x) - pose.theta)
    w = _clamp(ctrl.k_ang * err, ctrl.w_max)
    v = min(ctrl.k_lin * dist, ctrl.v_max) * max(0.0, math.cos(err))
    return v, w


class DelayedChannel:
    """FIFO delay line: an item pushed at t leaves at t + delay_ms."""

    def __init__(self, delay_ms: float):
        if delay_ms < 0:
            raise ValidationError("delay_ms must be >= 0")
        self.delay_ms = delay_ms
        self._queue: deque[tuple[float, Any]] = deque()

    def push(self, t_ms: float, item: Any) -> None:
        if self._queue and t_ms < self._queue[-1][0] - self.delay_ms:
            raise ValueError("items must be pushed in time order")
        self._queue.append((t_ms + self.delay_ms, item))

    def pop_ready(self, now_ms: float) -> list[tuple[float, Any]]:
        out = []
        while self._queue and self._queue[0][0] <= now_ms:
            out.append(self._queue.popleft())
        return out

    def __len__(self) -> int:
        return len(self._queue)


# -- payload encodings ------------------------------------------------------

def encode_command(v: float, w: float) -> bytes:
    return _CMD.pack(v, w)


def decode_command(payload: bytes) -> tuple[float, float] | None:
    if len(payload) != _CMD.size:
        return None
    return _CMD.unpack(payload)


def encode_pose(robot_id: str, pose: Pose, t_ms: float) -> bytes:
    return json.dumps({"robot": robot_id, "x": pose.x, "y": pose.y, "theta": pose.theta, "t_ms": t_ms},
                      sort_keys=True).encode()


def decode_pose(payload: bytes) -> tuple[str, Pose, float]:
    d = json.loads(payload)
    return d["robot"], Pose(d["x"], d["y"], d["theta"]), d["t_ms"]


# -- result types ---------------------------------------------------------------

@dataclass(frozen=True)
class TrajectorySample:
    t_ms: float
    robot: str
    x: float
    y: float
    theta: float
    publisher: str


@dataclass(frozen=True)
class LatencyRecord:
    tx_id: str
    publish_ms: float
    commit_ms: float
    latency_ms: float
    robot: str
    publisher: str


@dataclass(frozen=True)
class Visit:
    task: str
    waypoint_index: int
    t_ms: float
    error_m: float
    robot: str

    @property
    def label(self) -> str:
        return f"{self.task}{self.waypoint_index + 1}"


@dataclass
class ScenarioResult:
    trajectory: list[TrajectorySample] = field(default_factory=list)
    latency: list[LatencyRecord] = field(default_factory=list)
    visits: list[Visit] = field(default_factory=list)
    feedback_latency_ms: list[float] = field(default_factory=list)
    commands: dict[str, list[TopicMessage]] = field(default_factory=dict)
    rejected: dict[str, int] = field(default_factory=dict)
    expected_order: dict[str, list[str]] = field(default_factory=dict)
    end_ms: float = 0.0
    ledger: Ledger | None = field(default=None, compare=False, repr=False)

    def robot_trajectory(self, robot: str) -> list[TrajectorySample]:
        return [s for s in self.trajectory if s.robot == robot]

    def visit_order(self, robot: str | None = None) -> list[str]:
        return [v.label for v in sorted(self.visits, key=lambda v: v.t_ms) if robot is None or v.robot == robot]

    def order_preserved(self) -> bool:
        return all(self.visit_order(r) == exp for r, exp in self.expected_order.items())

    def frequency_series(self, robot: str, bin_s: float = 1.0) -> list[tuple[float, int]]:
        msgs = self.commands.get(robot, [])
        if not msgs:
            return []
        last = max(m.deliver_ms for m in msgs)
        bins = np.zeros(int(last // (bin_s * 1000)) + 1, dtype=int)
        for m in msgs:
            bins[int(max(m.deliver_ms, 0.0) // (bin_s * 1000))] += 1
        return [(i * bin_s, int(c)) for i, c in enumerate(bins)]


@dataclass(frozen=True)
class YawMetrics:
    t_s: np.ndarray
    yaw: np.ndarray
    rate: np.ndarray
    variance: float
    mean_rate: float


def yaw_metrics(trajectory: Iterable[TrajectorySample]) -> YawMetrics:
    """Unwrapped yaw, finite-difference yaw rate, and its variance."""
    samples = list(trajectory)
    if len(samples) < 2:
        raise ValidationError("yaw_metrics needs at least two samples")
    t = np.array([s.t_ms for s in samples], dtype=float) / 1000.0
    yaw = np.unwrap(np.array([s.theta for s in samples], dtype=float))
    dt = np.diff(t)
    if np.any(dt <= 0):
        raise ValidationError("trajectory samples must be strictly time-ordered")
    rate = np.diff(yaw) / dt
    return YawMetrics(t, yaw, rate, float(np.var(rate)), float(np.mean(rate)))


# -- participants -----------------------------------------------------------------

class LocalizationService:
    """Publishes true robot poses through an open-mode service asset at a fixed rate."""

    def __init__(self, broker: Broker, cert: Certificate, service_robot: str,
                 robots: Sequence[UnicycleRobot], rate_hz: float):
        if rate_hz <= 0:
            raise ValidationError("rate_hz must be > 0")
        self.broker = broker
        self.cert = cert
        self.service_robot = service_robot
        self.robots = list(robots)
        self.period_ms = 1000.0 / rate_hz
        self._next_ms = 0.0
        self.published: list[str] = []

    def tick(self, now_ms: float) -> list[str]:
        out = []
        while now_ms >= self._next_ms - 1e-9:
            for robot in self.robots:
                payload = encode_pose(robot.robot_id, robot.pose, now_ms)
                out.append(self.broker.publish(self.cert, self.service_robot, payload))
            self._next_ms += self.period_ms
        self.published.extend(out)
        return out


def localization_service(broker: Broker, cert: Certificate, robots: Sequence[UnicycleRobot],
                         rate_hz: float, service_robot: str = "optitrack") -> LocalizationService:
    return LocalizationService(broker, cert, service_robot, robots, rate_hz)


class Phase(str, Enum):
    PENDING = "pending"
    ACQUIRING = "acquiring"
    BACKOFF = "backoff"
    ACTIVE = "active"
    DONE = "done"


class _Acquirer:
    """acquire -> wait for commit -> (retry | proceed) state machine shared by tasks and loads."""

    def __init__(self, ledger: Ledger, cert: Certificate, robot: str, start_ms: float,
                 retry_ms: float, wait_for_grant: bool, exclusive: bool):
        self.ledger = ledger
        self.cert = cert
        self.robot = robot
        self.start_ms = start_ms
        self.retry_ms = retry_ms
        self.wait_for_grant = wait_for_grant
        self.exclusive = exclusive
        self.phase = Phase.PENDING
        self.granted = False
        self._tx: str | None = None
        self._retry_at = 0.0

    def update(self, now_ms: float) -> None:
        if self.phase is Phase.PENDING and now_ms >= self.start_ms:
            self._submit()
        elif self.phase is Phase.BACKOFF and now_ms >= self._retry_at:
            self._submit()
        elif self.phase is Phase.ACQUIRING:
            tx = self.ledger.transaction(self._tx)
            if tx.status is TxStatus.SIMULATED:
                return
            self.granted = tx.status is TxStatus.COMMITTED and tx.result is True
            if self.granted or not self.wait_for_grant:
                self.phase = Phase.ACTIVE
            else:
                self.phase = Phase.BACKOFF
                self._retry_at = now_ms + self.retry_ms

    def _submit(self) -> None:
        self._tx = self.ledger.submit("acquire", [self.robot], self.cert)
        self.phase = Phase.ACQUIRING
        if self.ledger.transaction(self._tx).status is TxStatus.REJECTED:
            self.phase = Phase.BACKOFF
            self._retry_at = self.ledger.clock.now_ms + self.retry_ms

    def release(self) -> None:
        self.phase = Phase.DONE
        if self.granted and self.exclusive:
            self.ledger.submit("release", [self.robot], self.cert)


@dataclass
class _TaskRunner:
    name: str
    acq: _Acquirer
    ctrl: WaypointController
    feedback: Subscription
    pose: Pose | None = None
    next_cmd_ms: float = 0.0


@dataclass
class _LoadRunner:
    acq: _Acquirer
    period_ms: float
    end_offset_ms: float
    next_ms: float | None = None
    stop_ms: float | None = None
    seq: int = 0


@dataclass
class Deployment:
    """CAs, certificates, ledger and broker built from a scenario."""

    clock: VirtualClock
    ledger: Ledger
    broker: Broker
    certs: dict[str, Certificate]
    admins: dict[str, Certificate]
    service_cert: Certificate
    cas: dict[str, Any]


def build_deployment(scenario: Scenario) -> Deployment:
    """Create CAs and ledger, and commit the robot setup before t = 0."""
    lead_ms = scenario.ledger.base_latency_ms + 1000.0
    clock = VirtualClock(-lead_ms)
    cas = {o.name: create_ca(o.name, seed=scenario.seed) for o in scenario.organizations}
    membership = Membership.from_cas(cas.values())
    admin_org = scenario.organizations[0].name
    contract = RobotContract(gated=scenario.gating, admin_org=admin_org)
    ledger = Ledger(contract, membership, scenario.ledger, clock)
    certs = {u.id: issue_certificate(cas[u.org], u.id, u.attributes) for u in scenario.users}
    admins = {o.name: issue_certificate(cas[o.name], o.admin, {"admin"}) for o in scenario.organizations}
    loc = scenario.localization
    service_org = loc.org if loc.org in cas else admin_org
    service_cert = issue_certificate(cas[service_org], loc.subject, {loc.attribute})

    descriptors = [
        robot_descriptor(RobotAsset.from_descriptor({
            "name": r.name, "mode": r.mode,
            "required_attribute": r.required_attribute,
            "subscribe_attribute": r.subscribe_attribute,
        }))
        for r in scenario.robots
    ]
    tx_id = ledger.submit("setup", [json.dumps(descriptors)], admins[admin_org])
    ledger.run_ordering(0.0)
    tx = ledger.transaction(tx_id)
    if tx.status is not TxStatus.COMMITTED:
        raise ValidationError(f"robot setup failed: {tx.error or tx.status.value}")
    clock.advance_to(0.0)
    return Deployment(clock, ledger, Broker(ledger), certs, admins, service_cert, cas)


def run_scenario(scenario: Scenario) -> ScenarioResult:
    dep = build_deployment(scenario)
    ledger, broker, clock = dep.ledger, dep.broker, dep.clock
    cfg = scenario.controller
    dt_ms = scenario.dt_s * 1000.0
    retry_ms = scenario.acquire_retry_s * 1000.0
    modes = {r.name: r.mode for r in scenario.robots}
    result = ScenarioResult(ledger=ledger)

    robots = {
        r.name: UnicycleRobot(r.name, Pose(*r.pose), v_max=cfg.v_max, w_max=cfg.w_max)
        for r in scenario.robots if r.pose is not None and any(t.robot == r.name for t in scenario.tasks)
    }
    last_publisher = {name: "" for name in robots}
    command_subs = {name: broker.subscribe(name) for name in robots}

    loc = None
    if robots:
        loc = LocalizationService(broker, dep.service_cert, scenario.localization.robot,
                                  list(robots.values()), scenario.localization.rate_hz)

    tasks: list[_TaskRunner] = []
    for name, t in zip(scenario.task_names(), scenario.tasks):
        cert = dep.certs[t.user]
        tasks.append(_TaskRunner(
            name=name,
            # the ungated contract never checks who publishes, so controllers do not wait for a grant
            acq=_Acquirer(ledger, cert, t.robot, t.start_s * 1000.0, retry_ms, scenario.gating,
                          modes[t.robot] == "exclusive"),
            ctrl=WaypointController.from_config(t.user, t.robot, t.waypoints, cfg),
            feedback=broker.subscribe(scenario.localization.robot, cert),
        ))
        result.expected_order.setdefault(t.robot, []).extend(f"{name}{i + 1}" for i in range(len(t.waypoints)))

    loads = [
        _LoadRunner(
            # offered load is unconditional: publishers send whether or not they were granted
            acq=_Acquirer(ledger, dep.certs[x.user], x.robot, x.start_s * 1000.0, retry_ms, False,
                          modes[x.robot] == "exclusive"),
            period_ms=1000.0 / x.rate_hz,
            end_offset_ms=x.duration_s * 1000.0,
        )
        for x in scenario.load
    ]
    load_subs = {x.robot: broker.subscribe(x.robot) for x in scenario.load if x.robot not in command_subs}

    def publish(cert: Certificate, robot: str, payload: bytes) -> None:
        try:
            broker.publish(cert, robot, payload)
        except ContractError as exc:
            result.rejected[cert.subject_id] = result.rejected.get(cert.subject_id, 0) + 1
            logger.debug("publish by %s rejected: %s", cert.subject_id, exc)

    max_ms = scenario.duration_s * 1000.0
    t_prev = 0.0
    k = 0
    while True:
        k += 1
        t = k * dt_ms
        # load publishes land at their exact times inside (t_prev, t]
        due = []
        for i, ld in enumerate(loads):
            if ld.next_ms is None:
                continue
            p = ld.next_ms
            while p <= t and p < ld.stop_ms:
                due.append((p, i))
                p += ld.period_ms
        for p, i in sorted(due):
            ld = loads[i]
            clock.advance_to(max(p, clock.now_ms))
            publish(ld.acq.cert, ld.acq.robot, struct.pack("<q", ld.seq) + b"load-msg")
            ld.seq += 1
            ld.next_ms = p + ld.period_ms

        clock.advance_to(t)
        ledger.run_ordering(t)

        for name, robot in robots.items():
            cursor = t_prev
            for m in command_subs[name].poll():
                if m.deliver_ms > cursor:
                    step_unicycle(robot, robot.v, robot.w, (m.deliver_ms - cursor) / 1000.0)
                    cursor = m.deliver_ms
                cmd = decode_command(m.payload)
                if cmd is not None:
                    robot.command(*cmd)
                    last_publisher[name] = m.publisher
            if t > cursor:
                step_unicycle(robot, robot.v, robot.w, (t - cursor) / 1000.0)
            p = robot.pose
            result.trajectory.append(TrajectorySample(t, name, p.x, p.y, p.theta, last_publisher[name]))

        if loc is not None:
            loc.tick(t)

        for run in tasks:
            for m in run.feedback.poll():
                rid, pose, _ = decode_pose(m.payload)
                if rid == run.ctrl.robot_id:
                    run.pose = pose
                    result.feedback_latency_ms.append(m.latency_ms)
            run.acq.update(t)
            if run.acq.phase is not Phase.ACTIVE or run.pose is None or t < run.next_cmd_ms:
                continue
            run.next_cmd_ms = max(run.next_cmd_ms + 1000.0 / run.ctrl.rate_hz, t)
            before = run.ctrl.index
            v, w = control_step(run.ctrl, run.pose)
            true_pose = robots[run.ctrl.robot_id].pose
            for idx in range(before, run.ctrl.index):
                wx, wy = run.ctrl.waypoints[idx]
                err = math.hypot(true_pose.x - wx, true_pose.y - wy)
                result.visits.append(Visit(run.name, idx, t, err, run.ctrl.robot_id))
            publish(run.acq.cert, run.ctrl.robot_id, encode_command(v, w))
            if run.ctrl.done:
                run.acq.release()

        for ld in loads:
            if ld.next_ms is None:
                ld.acq.update(t)
                if ld.acq.phase is Phase.ACTIVE:
                    ld.next_ms = t
                    ld.stop_ms = t + ld.end_offset_ms
            elif t >= ld.stop_ms and ld.acq.phase is Phase.ACTIVE:
                ld.acq.release()

        t_prev = t
        finished = all(r.acq.phase is Phase.DONE for r in tasks) and \
            all(ld.acq.phase is Phase.DONE for ld in loads)
        if t >= max_ms:
            break
        if finished and not any(tx.submitter is not dep.service_cert for tx in ledger.in_flight_transactions()):
            break

    result.end_ms = t
    for name, sub in {**command_subs, **load_subs}.items():
        sub.poll()
        result.commands[name] = list(sub.delivered)
    for tx in ledger.transactions.values():
        if tx.function == "set" and tx.status is TxStatus.COMMITTED:
            result.latency.append(LatencyRecord(tx.tx_id, tx.submit_ms, tx.commit_ms,
                                                tx.commit_ms - tx.submit_ms, tx.args[0], tx.submitter.subject_id))
    return result
