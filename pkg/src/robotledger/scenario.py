"""Scenario files: declarative description of a deployment and workload.

Scenarios are YAML documents.  ``load_scenario`` validates every reference
and reports all problems at once as ``field: message`` lines, with YAML
line numbers for syntax errors.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from .errors import ValidationError
from .identity import ATTRIBUTE_PATTERN
from .ledger import OrderingConfig

ARENA_WIDTH = 8.0
ARENA_DEPTH = 9.0
ARENA_HEIGHT = 5.0


class ScenarioError(ValidationError):
    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid scenario:\n  " + "\n  ".join(self.errors))


@dataclass(frozen=True)
class Organization:
    name: str
    admin: str = "admin"


@dataclass(frozen=True)
class User:
    id: str
    org: str
    attributes: tuple[str, ...] = ()


@dataclass(frozen=True)
class RobotSpec:
    name: str
    mode: str = "exclusive"
    required_attribute: str = ""
    subscribe_attribute: str = ""
    pose: tuple[float, float, float] | None = None  # None: ledger asset only, not simulated


@dataclass(frozen=True)
class TaskSpec:
    user: str
    robot: str
    waypoints: tuple[tuple[float, float], ...]
    name: str = ""
    start_s: float = 0.0


@dataclass(frozen=True)
class LoadSpec:
    user: str
    robot: str
    rate_hz: float
    duration_s: float
    start_s: float = 0.0


@dataclass(frozen=True)
class ControllerConfig:
    k_lin: float = 0.8
    k_ang: float = 2.0
    v_max: float = 0.31
    w_max: float = 1.9
    arrival_radius: float = 0.1
    rate_hz: float = 50.0


@dataclass(frozen=True)
class LocalizationConfig:
    robot: str = "optitrack"
    org: str = "Org2"
    subject: str = "optitrack-service"
    attribute: str = "optitrack-publisher"
    rate_hz: float = 10.0


@dataclass(frozen=True)
class Scenario:
    organizations: tuple[Organization, ...]
    users: tuple[User, ...]
    robots: tuple[RobotSpec, ...]
    tasks: tuple[TaskSpec, ...] = ()
    load: tuple[LoadSpec, ...] = ()
    ledger: OrderingConfig = field(default_factory=OrderingConfig)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    localization: LocalizationConfig = field(default_factory=LocalizationConfig)
    gating: bool = True
    seed: int = 0
    duration_s: float = 120.0
    dt_s: float = 0.02
    acquire_retry_s: float = 1.0

    def task_names(self) -> list[str]:
        return [t.name or chr(ord("A") + i) for i, t in enumerate(self.tasks)]

    def replace(self, **changes) -> "Scenario":
        from dataclasses import replace
        return replace(self, **changes)

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        d: dict[str, Any] = {
            "seed": self.seed,
            "gating": "on" if self.gating else "off",
            "duration_s": self.duration_s,
            "dt_s": self.dt_s,
            "acquire_retry_s": self.acquire_retry_s,
            "organizations": [asdict(o) for o in self.organizations],
            "users": [{"id": u.id, "org": u.org, "attributes": list(u.attributes)} for u in self.users],
            "robots": [],
            "tasks": [],
            "load": [asdict(x) for x in self.load],
            "ledger": {
                "base_latency_ms": self.ledger.base_latency_ms,
                "service_rate": self.ledger.service_rate,
                "batch_size": self.ledger.batch_size,
                "batch_timeout_ms": self.ledger.batch_timeout_ms,
            },
            "controller": asdict(self.controller),
            "localization": asdict(self.localization),
        }
        for r in self.robots:
            rd: dict[str, Any] = {"name": r.name, "mode": r.mode}
            if r.required_attribute:
                rd["required_attribute"] = r.required_attribute
            if r.subscribe_attribute:
                rd["subscribe_attribute"] = r.subscribe_attribute
            if r.pose is not None:
                rd["pose"] = list(r.pose)
            d["robots"].append(rd)
        for t in self.tasks:
            td: dict[str, Any] = {"user": t.user, "robot": t.robot, "start_s": t.start_s,
                                  "waypoints": [list(p) for p in t.waypoints]}
            if t.name:
                td["name"] = t.name
            d["tasks"].append(td)
        return d

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=None)

    @classmethod
    def from_dict(cls, doc: Any) -> "Scenario":
        return _Parser().parse(doc)


def load_scenario(path: str | Path) -> Scenario:
    text = Path(path).read_text()
    return parse_scenario(text)


def parse_scenario(text: str) -> Scenario:
    try:
        doc = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        raise ScenarioError([f"{where}: {exc.problem}"]) from exc
    except yaml.YAMLError as exc:
        raise ScenarioError([str(exc)]) from exc
    return Scenario.from_dict(doc)


class _Parser:
    def __init__(self):
        self.errors: list[str] = []

    def err(self, where: str, msg: str) -> None:
        self.errors.append(f"{where}: {msg}")

    def num(self, where: str, value: Any, default: float | None = None, positive=False, minimum=None) -> float:
        if value is None:
            if default is None:
                self.err(where, "required")
                return float("nan")
            return default
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            self.err(where, f"expected a finite number, got {value!r}")
            return float("nan")
        if positive and value <= 0:
            self.err(where, "must be > 0")
        if minimum is not None and value < minimum:
            self.err(where, f"must be >= {minimum}")
        return float(value)

    def text(self, where: str, value: Any, default: str | None = None) -> str:
        if value is None and default is not None:
            return default
        if not isinstance(value, str) or not value:
            self.err(where, "expected a non-empty string")
            return ""
        return value

    def items(self, where: str, value: Any) -> list:
        if value is None:
            return []
        if not isinstance(value, list):
            self.err(where, "expected a list")
            return []
        return value

    def mapping(self, where: str, value: Any) -> dict:
        if value is None:
            return {}
        if not isinstance(value, dict):
            self.err(where, "expected a mapping")
            return {}
        return value

    def point(self, where: str, value: Any, n: int) -> tuple[float, ...] | None:
        if not isinstance(value, (list, tuple)) or len(value) != n:
            self.err(where, f"expected [{', '.join('xyθ'[:n])}]")
            return None
        return tuple(self.num(f"{where}[{i}]", v) for i, v in enumerate(value))

    def in_arena(self, where: str, x: float, y: float) -> None:
        if not (0.0 <= x <= ARENA_WIDTH and 0.0 <= y <= ARENA_DEPTH):
            self.err(where, f"({x}, {y}) lies outside the {ARENA_WIDTH:g}x{ARENA_DEPTH:g} m arena")

    def parse(self, doc: Any) -> Scenario:
        if not isinstance(doc, dict):
            raise ScenarioError(["<root>: expected a mapping"])
        known = {f.name for f in fields(Scenario)}
        for key in doc:
            if key not in known:
                self.err(str(key), "unknown field")

        orgs = []
        for i, o in enumerate(self.items("organizations", doc.get("organizations"))):
            o = self.mapping(f"organizations[{i}]", o)
            orgs.append(Organization(self.text(f"organizations[{i}].name", o.get("name")),
                                     self.text(f"organizations[{i}].admin", o.get("admin"), "admin")))
        if not orgs:
            self.err("organizations", "at least one organization is required")
        org_names = [o.name for o in orgs]
        self._dupes("organizations", org_names)

        users = []
        for i, u in enumerate(self.items("users", doc.get("users"))):
            u = self.mapping(f"users[{i}]", u)
            uid = self.text(f"users[{i}].id", u.get("id"))
            org = self.text(f"users[{i}].org", u.get("org"))
            if org and org not in org_names:
                self.err(f"users[{i}].org", f"unknown organization {org!r}")
            attrs = []
            for j, a in enumerate(self.items(f"users[{i}].attributes", u.get("attributes"))):
                if not isinstance(a, str) or not ATTRIBUTE_PATTERN.fullmatch(a):
                    self.err(f"users[{i}].attributes[{j}]", f"invalid attribute name {a!r}")
                else:
                    attrs.append(a)
            users.append(User(uid, org, tuple(attrs)))
        user_ids = [u.id for u in users]
        self._dupes("users", user_ids)

        robots = []
        for i, r in enumerate(self.items("robots", doc.get("robots"))):
            r = self.mapping(f"robots[{i}]", r)
            name = self.text(f"robots[{i}].name", r.get("name"))
            if "/" in name:
                self.err(f"robots[{i}].name", "must not contain '/'")
            mode = r.get("mode", "exclusive")
            if mode not in ("exclusive", "open"):
                self.err(f"robots[{i}].mode", f"expected exclusive|open, got {mode!r}")
            for attr_field in ("required_attribute", "subscribe_attribute"):
                val = r.get(attr_field) or ""
                if val and (not isinstance(val, str) or not ATTRIBUTE_PATTERN.fullmatch(val)):
                    self.err(f"robots[{i}].{attr_field}", f"invalid attribute name {val!r}")
            pose = None
            if r.get("pose") is not None:
                pose = self.point(f"robots[{i}].pose", r.get("pose"), 3)
                if pose:
                    self.in_arena(f"robots[{i}].pose", pose[0], pose[1])
            robots.append(RobotSpec(name, mode, r.get("required_attribute") or "",
                                    r.get("subscribe_attribute") or "", pose))
        robot_names = [r.name for r in robots]
        self._dupes("robots", robot_names)
        mobile = {r.name for r in robots if r.pose is not None}

        tasks = []
        for i, t in enumerate(self.items("tasks", doc.get("tasks"))):
            t = self.mapping(f"tasks[{i}]", t)
            user = self.text(f"tasks[{i}].user", t.get("user"))
            robot = self.text(f"tasks[{i}].robot", t.get("robot"))
            if user and user not in user_ids:
                self.err(f"tasks[{i}].user", f"unknown user {user!r}")
            if robot and robot not in robot_names:
                self.err(f"tasks[{i}].robot", f"unknown robot {robot!r}")
            elif robot and robot not in mobile:
                self.err(f"tasks[{i}].robot", f"robot {robot!r} has no pose and cannot move")
            wps = []
            raw_wps = self.items(f"tasks[{i}].waypoints", t.get("waypoints"))
            if not raw_wps:
                self.err(f"tasks[{i}].waypoints", "at least one waypoint is required")
            for j, p in enumerate(raw_wps):
                pt = self.point(f"tasks[{i}].waypoints[{j}]", p, 2)
                if pt:
                    self.in_arena(f"tasks[{i}].waypoints[{j}]", *pt)
                    wps.append(pt)
            name = t.get("name") or ""
            start = self.num(f"tasks[{i}].start_s", t.get("start_s"), 0.0, minimum=0.0)
            tasks.append(TaskSpec(user, robot, tuple(wps), name, start))

        loads = []
        for i, x in enumerate(self.items("load", doc.get("load"))):
            x = self.mapping(f"load[{i}]", x)
            user = self.text(f"load[{i}].user", x.get("user"))
            robot = self.text(f"load[{i}].robot", x.get("robot"))
            if user and user not in user_ids:
                self.err(f"load[{i}].user", f"unknown user {user!r}")
            if robot and robot not in robot_names:
                self.err(f"load[{i}].robot", f"unknown robot {robot!r}")
            loads.append(LoadSpec(
                user, robot,
                self.num(f"load[{i}].rate_hz", x.get("rate_hz"), positive=True),
                self.num(f"load[{i}].duration_s", x.get("duration_s"), positive=True),
                self.num(f"load[{i}].start_s", x.get("start_s"), 0.0, minimum=0.0),
            ))

        lg = self.mapping("ledger", doc.get("ledger"))
        base = OrderingConfig()
        batch = lg.get("batch_size", base.batch_size)
        if isinstance(batch, bool) or not isinstance(batch, int) or batch < 1:
            self.err("ledger.batch_size", "must be an integer >= 1")
            batch = 1
        timing = dict(
            batch_timeout_ms=self.num("ledger.batch_timeout_ms", lg.get("batch_timeout_ms"), base.batch_timeout_ms, minimum=0.0),
            service_rate=self.num("ledger.service_rate", lg.get("service_rate"), base.service_rate, positive=True),
            base_latency_ms=self.num("ledger.base_latency_ms", lg.get("base_latency_ms"), base.base_latency_ms, minimum=0.0),
        )
        if any(e.startswith("ledger.") for e in self.errors):
            ledger = base
        else:
            ledger = OrderingConfig(batch_size=batch, **timing)
        for k in lg:
            if k not in ("batch_size", "batch_timeout_ms", "service_rate", "base_latency_ms"):
                self.err(f"ledger.{k}", "unknown field")

        controller = self._section("controller", doc.get("controller"), ControllerConfig, positive=True)
        localization = self._section("localization", doc.get("localization"), LocalizationConfig)
        if localization.rate_hz <= 0:
            self.err("localization.rate_hz", "must be > 0")

        gating = doc.get("gating", True)
        if isinstance(gating, str) and gating.lower() in ("on", "off"):
            gating = gating.lower() == "on"
        if not isinstance(gating, bool):
            self.err("gating", f"expected on|off, got {gating!r}")
            gating = True

        seed = doc.get("seed", 0)
        if isinstance(seed, bool) or not isinstance(seed, int):
            self.err("seed", "expected an integer")
            seed = 0

        if tasks:
            loc_robot = next((r for r in robots if r.name == localization.robot), None)
            if loc_robot is None:
                self.err("localization.robot", f"unknown robot {localization.robot!r}; tasks need pose feedback")
            if localization.org not in org_names:
                self.err("localization.org", f"unknown organization {localization.org!r}")
            if loc_robot is not None and loc_robot.subscribe_attribute:
                by_id = {u.id: u for u in users}
                for i, t in enumerate(tasks):
                    u = by_id.get(t.user)
                    if u and loc_robot.subscribe_attribute not in u.attributes:
                        self.err(f"tasks[{i}].user",
                                 f"{u.id!r} lacks {loc_robot.subscribe_attribute!r} needed for pose feedback")

        scenario = Scenario(
            organizations=tuple(orgs),
            users=tuple(users),
            robots=tuple(robots),
            tasks=tuple(tasks),
            load=tuple(loads),
            ledger=ledger,
            controller=controller,
            localization=localization,
            gating=gating,
            seed=seed,
            duration_s=self.num("duration_s", doc.get("duration_s"), 120.0, positive=True),
            dt_s=self.num("dt_s", doc.get("dt_s"), 0.02, positive=True),
            acquire_retry_s=self.num("acquire_retry_s", doc.get("acquire_retry_s"), 1.0, positive=True),
        )
        if self.errors:
            raise ScenarioError(self.errors)
        return scenario

    def _dupes(self, where: str, names: list[str]) -> None:
        seen = set()
        for n in names:
            if n in seen:
                self.err(where, f"duplicate name {n!r}")
            seen.add(n)

    def _section(self, where: str, value: Any, cls, positive: bool = False):
        raw = self.mapping(where, value)
        kwargs = {}
        for f in fields(cls):
            if f.name not in raw:
                continue
            v = raw[f.name]
            if isinstance(f.default, float):
                kwargs[f.name] = self.num(f"{where}.{f.name}", v, positive=positive)
            else:
                kwargs[f.name] = self.text(f"{where}.{f.name}", v)
        for k in raw:
            if k not in {f.name for f in fields(cls)}:
                self.err(f"{where}.{k}", "unknown field")
        return cls(**kwargs)


# -- fixtures -------------------------------------------------------------

START = (1.0, 1.0)
TASK_A = ((3.0, 2.0), (5.0, 3.0), (7.0, 4.0))
TASK_B = ((6.0, 6.0), (4.0, 7.0), (2.0, 8.0))


def _deployment(users: tuple[User, ...], robots: tuple[RobotSpec, ...]) -> dict:
    return dict(
        organizations=(Organization("Org1", "admin"), Organization("Org2", "admin")),
        users=users,
        robots=robots,
    )


def two_task_scenario(gating: bool = True, seed: int = 0, second_task_start_s: float = 10.0) -> Scenario:
    """Two users each give the Turtlebot4 a three-waypoint task; the second arrives mid-run."""
    users = (
        User("salma", "Org1", ("turtlebot4", "husky", "optitrack")),
        User("farhad", "Org1", ("turtlebot4", "optitrack")),
    )
    robots = (
        RobotSpec("turtlebot4", pose=(START[0], START[1], 0.0)),
        RobotSpec("husky"),
        RobotSpec("optitrack", mode="open", required_attribute="optitrack-publisher",
                  subscribe_attribute="optitrack"),
    )
    tasks = (
        TaskSpec("salma", "turtlebot4", TASK_A, "A", 0.0),
        TaskSpec("farhad", "turtlebot4", TASK_B, "B", second_task_start_s),
    )
    return Scenario(**_deployment(users, robots), tasks=tasks, gating=gating, seed=seed, duration_s=120.0)


def throughput_scenario(gating: bool = True, seed: int = 0, rate_hz: float = 50.0,
                        publishers: int = 2, duration_s: float = 30.0) -> Scenario:
    """Conflicting publishers on one robot; only the first holds the robot's attribute."""
    users = [User("salma", "Org1", ("turtlebot4", "optitrack"))]
    users += [User(f"user{i}", "Org1", ("optitrack",)) for i in range(1, publishers)]
    robots = (
        RobotSpec("turtlebot4"),
        RobotSpec("optitrack", mode="open", required_attribute="optitrack-publisher",
                  subscribe_attribute="optitrack"),
    )
    load = tuple(LoadSpec(u.id, "turtlebot4", rate_hz, duration_s) for u in users)
    return Scenario(**_deployment(tuple(users), robots), load=load, gating=gating, seed=seed,
                    duration_s=duration_s * 4 + 10.0)
