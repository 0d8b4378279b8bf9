"""Throughput/latency sweeps over offered publish rates."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from .broker import measure
from .errors import ValidationError
from .ledger import OrderingConfig
from .scenario import throughput_scenario
from .simulation import run_scenario

_PROFILE = re.compile(r"^\s*(?P<rate>\d+(?:\.\d+)?)\s*(?:/\s*(?P<n>\d+))?\s*(?::\s*(?P<gate>on|off))?\s*$")

DEFAULT_PROFILES = ("1", "10", "20", "30", "40", "50", "60", "70", "80", "90", "100", "100/2:off")


@dataclass(frozen=True)
class LoadProfile:
    offered_hz: float
    publishers: int = 1
    gating: bool = True

    @classmethod
    def parse(cls, text: str) -> "LoadProfile":
        """``RATE[/PUBLISHERS][:on|off]``, e.g. ``50``, ``100/2:off``."""
        m = _PROFILE.match(text)
        if not m:
            raise ValidationError(f"bad load profile {text!r}; expected RATE[/PUBLISHERS][:on|off]")
        rate = float(m["rate"])
        n = int(m["n"] or 1)
        if rate <= 0 or n < 1:
            raise ValidationError(f"bad load profile {text!r}: rate and publishers must be positive")
        return cls(rate, n, (m["gate"] or "on") == "on")


@dataclass(frozen=True)
class BenchRow:
    offered_hz: float
    publishers: int
    gating: bool
    delivered_hz: float
    p50_ms: float | None
    p95_ms: float | None
    p99_ms: float | None
    latency_slope_ms_per_s: float


def run_profile(profile: LoadProfile, duration_s: float = 30.0, seed: int = 0,
                ledger: OrderingConfig | None = None) -> BenchRow:
    """Offer ``profile.offered_hz`` split evenly across publishers; only the first is authorized."""
    sc = throughput_scenario(gating=profile.gating, seed=seed, rate_hz=profile.offered_hz / profile.publishers,
                             publishers=profile.publishers, duration_s=duration_s)
    if ledger is not None:
        sc = sc.replace(ledger=ledger)
    result = run_scenario(sc)
    msgs = result.commands.get("turtlebot4", [])
    m = measure(msgs, duration_s)
    slope = 0.0
    if len(msgs) >= 2:
        t = np.array([x.publish_ms for x in msgs]) / 1000.0
        lat = np.array([x.latency_ms for x in msgs])
        if np.ptp(t) > 0:
            slope = float(np.polyfit(t, lat, 1)[0])
    return BenchRow(profile.offered_hz, profile.publishers, profile.gating, m.delivered_hz,
                    m.p50_ms, m.p95_ms, m.p99_ms, slope)


def run_bench(profiles, duration_s: float = 30.0, seed: int = 0,
              ledger: OrderingConfig | None = None) -> list[BenchRow]:
    profiles = [p if isinstance(p, LoadProfile) else LoadProfile.parse(p) for p in profiles]
    if not profiles:
        raise ValidationError("at least one load profile is required")
    if not duration_s > 0 or not math.isfinite(duration_s):
        raise ValidationError("duration must be positive")
    return [run_profile(p, duration_s, seed, ledger) for p in profiles]
