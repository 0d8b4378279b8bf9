"""CSV/text outputs and matplotlib figures for scenario runs and benches."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .bench import BenchRow  # noqa: E402
from .broker import measure  # noqa: E402
from .scenario import ARENA_DEPTH, ARENA_WIDTH, Scenario  # noqa: E402
from .simulation import ScenarioResult, yaw_metrics  # noqa: E402

TRAJECTORY_COLUMNS = ["t_ms", "robot", "x", "y", "theta", "publisher_of_last_cmd"]
LATENCY_COLUMNS = ["tx_id", "publish_ms", "commit_ms", "latency_ms"]
VISITS_COLUMNS = ["task", "waypoint_index", "t_ms", "error_m"]
# trailing publishers/gating columns tell apart rows offered at the same rate
BENCH_COLUMNS = ["offered_hz", "delivered_hz", "p50", "p95", "p99", "publishers", "gating"]


def _fmt(x: float | None, nd: int = 3) -> str:
    return "" if x is None else f"{x:.{nd}f}"


def write_trajectory_csv(result: ScenarioResult, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJECTORY_COLUMNS)
        for s in result.trajectory:
            w.writerow([_fmt(s.t_ms, 1), s.robot, _fmt(s.x, 5), _fmt(s.y, 5), _fmt(s.theta, 5), s.publisher])


def write_latency_csv(result: ScenarioResult, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LATENCY_COLUMNS)
        for r in result.latency:
            w.writerow([r.tx_id, _fmt(r.publish_ms), _fmt(r.commit_ms), _fmt(r.latency_ms)])


def write_visits_csv(result: ScenarioResult, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(VISITS_COLUMNS)
        for v in sorted(result.visits, key=lambda v: v.t_ms):
            w.writerow([v.task, v.waypoint_index, _fmt(v.t_ms, 1), _fmt(v.error_m, 4)])


def write_bench_csv(rows: Sequence[BenchRow], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(BENCH_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r.offered_hz, 2), _fmt(r.delivered_hz, 2), _fmt(r.p50_ms, 1),
                        _fmt(r.p95_ms, 1), _fmt(r.p99_ms, 1), r.publishers, "on" if r.gating else "off"])


def summarize(scenario: Scenario, result: ScenarioResult) -> str:
    lines = [
        f"gating: {'on' if scenario.gating else 'off'}",
        f"seed: {scenario.seed}",
        f"end_ms: {result.end_ms:.0f}",
    ]
    for robot, msgs in sorted(result.commands.items()):
        if not msgs:
            lines.append(f"delivered_hz[{robot}]: 0.00")
            continue
        span_s = max((msgs[-1].deliver_ms - msgs[0].deliver_ms) / 1000.0, 1e-3)
        m = measure(msgs, span_s + 1e-6)
        lines.append(f"delivered_hz[{robot}]: {m.delivered_hz:.2f}")
        lines.append(f"latency_ms[{robot}] p50/p95/p99: {m.p50_ms:.1f} / {m.p95_ms:.1f} / {m.p99_ms:.1f}")
    if result.feedback_latency_ms:
        fb = np.asarray(result.feedback_latency_ms)
        lines.append(f"feedback_latency_ms mean/max: {fb.mean():.1f} / {fb.max():.1f}")
    if result.expected_order:
        verdict = "PASS" if result.order_preserved() else "VIOLATED"
        lines.append(f"waypoint_order: {verdict} ({' '.join(result.visit_order()) or 'no visits'})")
        for robot in sorted(result.expected_order):
            traj = result.robot_trajectory(robot)
            if len(traj) >= 2:
                lines.append(f"yaw_rate_variance[{robot}]: {yaw_metrics(traj).variance:.5f}")
    else:
        lines.append("waypoint_order: n/a")
    rejected = sum(result.rejected.values())
    lines.append(f"rejected_publishes: {rejected}")
    for user, n in sorted(result.rejected.items()):
        lines.append(f"rejected_publishes[{user}]: {n}")
    return "\n".join(lines) + "\n"


# -- figures ------------------------------------------------------------------

def plot_trajectory(scenario: Scenario, result: ScenarioResult, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(5, 5.6))
    for robot in result.expected_order:
        traj = result.robot_trajectory(robot)
        ax.plot([s.x for s in traj], [s.y for s in traj], lw=1.2, label=f"{robot} (actual)")
    for name, task in zip(scenario.task_names(), scenario.tasks):
        start = next(r.pose for r in scenario.robots if r.name == task.robot)
        xs = [start[0]] + [p[0] for p in task.waypoints]
        ys = [start[1]] + [p[1] for p in task.waypoints]
        ax.plot(xs, ys, "--", lw=0.8, color="gray")
        for i, (x, y) in enumerate(task.waypoints):
            ax.plot(x, y, "o", ms=4, color="k")
            ax.annotate(f"{name}{i + 1}", (x, y), textcoords="offset points", xytext=(4, 4), fontsize=8)
    ax.set_xlim(0, ARENA_WIDTH)
    ax.set_ylim(0, ARENA_DEPTH)
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_title(f"gating {'on' if scenario.gating else 'off'}")
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_yaw(result: ScenarioResult, path: Path) -> None:
    robots = list(result.expected_order)
    fig, axes = plt.subplots(2, 1, figsize=(7, 4.5), sharex=True)
    for robot in robots:
        traj = result.robot_trajectory(robot)
        if len(traj) < 2:
            continue
        ym = yaw_metrics(traj)
        axes[0].plot(ym.t_s, np.arctan2(np.sin(ym.yaw), np.cos(ym.yaw)), lw=0.8, label=robot)
        axes[1].plot(ym.t_s[1:], ym.rate, lw=0.6, label=f"{robot} (var {ym.variance:.3f})")
    axes[0].set_ylabel("yaw [rad]")
    axes[1].set_ylabel("yaw rate [rad/s]")
    axes[1].set_xlabel("t [s]")
    axes[1].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_latency(result: ScenarioResult, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(7, 3.5))
    by_pub: dict[str, list] = {}
    for r in result.latency:
        by_pub.setdefault(r.publisher, []).append(r)
    for pub, recs in sorted(by_pub.items()):
        ax.plot([r.publish_ms / 1000 for r in recs], [r.latency_ms for r in recs], ".", ms=2, label=pub)
    ax.set_xlabel("publish time [s]")
    ax.set_ylabel("commit latency [ms]")
    if by_pub:
        ax.legend(fontsize=8, markerscale=4)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_bench(rows: Sequence[BenchRow], path: Path) -> None:
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.6))
    for gated in (True, False):
        sel = [r for r in rows if r.gating == gated]
        if not sel:
            continue
        lab = "gated" if gated else "ungated"
        a1.plot([r.offered_hz for r in sel], [r.delivered_hz for r in sel], "o-", label=lab)
        a2.plot([r.offered_hz for r in sel], [r.p99_ms or np.nan for r in sel], "o-", label=lab)
    hi = max(r.offered_hz for r in rows)
    a1.plot([0, hi], [0, hi], ":", color="gray", lw=0.8)
    a1.set_xlabel("offered [Hz]")
    a1.set_ylabel("delivered [Hz]")
    a2.set_xlabel("offered [Hz]")
    a2.set_ylabel("p99 latency [ms]")
    a2.set_yscale("log")
    a1.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_run_outputs(scenario: Scenario, result: ScenarioResult, out: Path, figures: bool = True) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / n for n in ("trajectory.csv", "latency.csv", "visits.csv", "blocks.log", "summary.txt")]
    write_trajectory_csv(result, paths[0])
    write_latency_csv(result, paths[1])
    write_visits_csv(result, paths[2])
    with open(paths[3], "w") as fh:
        result.ledger.write_block_log(fh)
    paths[4].write_text(summarize(scenario, result))
    if figures:
        if result.expected_order:
            plot_trajectory(scenario, result, out / "trajectory.png")
            plot_yaw(result, out / "yaw.png")
            paths += [out / "trajectory.png", out / "yaw.png"]
        plot_latency(result, out / "latency.png")
        paths.append(out / "latency.png")
    return paths
