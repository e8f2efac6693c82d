"""CLI and experiment harness.

    camctl run <spec> [--out DIR]     run an experiment grid, write JSONL log
                                      + machine report, print a summary table
    camctl replay <log>               recompute the report from the log only
    camctl validate <file> [--task T] parse/typecheck/whitebox a DSL file
                                      against a scene snapshot
    camctl bench                      monitor_tick latency benchmark

Spec files are flat `key = value` text; comma-separated values of modes /
drop_p / place_noise_cm / disturbances form the experiment grid (cartesian
product). Episode seeds are seed_base + episode index, cell-local, so cell
results are independent of execution order. The CAM_SEED environment
variable overrides seed_base.

The run log is line-delimited JSON with a per-line chained checksum; replay
verifies the chain and must reproduce the report byte for byte.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import statistics
import sys
import time
from dataclasses import dataclass

import numpy as np

from camlab.errors import CamlabError, LogChecksumError, TruncatedLog
from camlab.monitor import DebouncePolicy, RealTimeMonitor, SimTracker, TrackerConfig, latency_report
from camlab.simlab import EpisodeConfig, run_episode
from camlab.simlab.disturb import standard_disturbances
from camlab.simlab.scenes import TEMPLATES

__all__ = [
    "ExperimentSpec",
    "run_spec",
    "replay_log",
    "JsonlLogWriter",
    "read_log",
    "main",
]

SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# experiment spec


def _parse_kv(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"spec line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def _floats(value: str):
    return tuple(float(v.strip()) for v in value.split(","))


def _strs(value: str):
    return tuple(v.strip() for v in value.split(","))


@dataclass(frozen=True)
class ExperimentSpec:
    task: str
    episodes: int = 20
    seed_base: int = 0
    modes: tuple = ("off", "full")
    drop_p: tuple = (0.0,)
    place_noise_cm: tuple = (0.0,)
    disturbances: tuple = ("none",)
    budget_ticks: int = 1400
    tracker: TrackerConfig = TrackerConfig()
    debounce: DebouncePolicy = DebouncePolicy()
    max_retries: int = 5

    @classmethod
    def loads(cls, text: str) -> "ExperimentSpec":
        kv = _parse_kv(text)
        task = kv.pop("task", None)
        if task not in TEMPLATES:
            raise ValueError(f"spec needs task = one of {TEMPLATES}, got {task!r}")
        kwargs = {"task": task}
        if "episodes" in kv:
            kwargs["episodes"] = int(kv.pop("episodes"))
        if "seed_base" in kv:
            kwargs["seed_base"] = int(kv.pop("seed_base"))
        if "modes" in kv:
            kwargs["modes"] = _strs(kv.pop("modes"))
        if "drop_p" in kv:
            kwargs["drop_p"] = _floats(kv.pop("drop_p"))
        if "place_noise_cm" in kv:
            kwargs["place_noise_cm"] = _floats(kv.pop("place_noise_cm"))
        if "disturbances" in kv:
            kwargs["disturbances"] = _strs(kv.pop("disturbances"))
        if "budget_ticks" in kv:
            kwargs["budget_ticks"] = int(kv.pop("budget_ticks"))
        tr = {}
        if "tracker.sigma" in kv:
            tr["sigma"] = float(kv.pop("tracker.sigma"))
        if "tracker.dropout" in kv:
            tr["dropout"] = float(kv.pop("tracker.dropout"))
        if "tracker.resync" in kv:
            tr["resync_interval"] = int(kv.pop("tracker.resync"))
        if tr:
            kwargs["tracker"] = TrackerConfig(**tr)
        db = {}
        if "debounce.k" in kv:
            db["k"] = int(kv.pop("debounce.k"))
        if "debounce.h" in kv:
            db["h"] = int(kv.pop("debounce.h"))
        if db:
            kwargs["debounce"] = DebouncePolicy(**db)
        if "max_retries" in kv:
            kwargs["max_retries"] = int(kv.pop("max_retries"))
        if kv:
            raise ValueError(f"unknown spec keys: {sorted(kv)}")
        if kwargs.get("episodes", 1) < 1:
            raise ValueError("episodes must be >= 1")
        seed_env = os.environ.get("CAM_SEED")
        if seed_env is not None:
            kwargs["seed_base"] = int(seed_env)
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "ExperimentSpec":
        with open(path, encoding="utf-8") as fh:
            return cls.loads(fh.read())

    def cells(self) -> list:
        out = []
        for mode in self.modes:
            for p in self.drop_p:
                for q in self.place_noise_cm:
                    for sel in self.disturbances:
                        out.append({"mode": mode, "drop_p": p, "place_noise_cm": q, "disturbances": sel})
        return out

    def as_dict(self) -> dict:
        return {
            "task": self.task,
            "episodes": self.episodes,
            "seed_base": self.seed_base,
            "modes": list(self.modes),
            "drop_p": list(self.drop_p),
            "place_noise_cm": list(self.place_noise_cm),
            "disturbances": list(self.disturbances),
            "budget_ticks": self.budget_ticks,
            "tracker": {
                "sigma": self.tracker.sigma,
                "dropout": self.tracker.dropout,
                "resync": self.tracker.resync_interval,
            },
            "debounce": {"k": self.debounce.k, "h": self.debounce.h},
            "max_retries": self.max_retries,
        }


# ---------------------------------------------------------------------------
# JSONL log with a chained per-line checksum


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


class JsonlLogWriter:
    def __init__(self, path):
        self.path = path
        self._fh = open(path, "w", encoding="utf-8")
        self._prev = ""
        self.lines = 0

    def write(self, record: dict):
        core = _jsonable(record)
        chk = hashlib.sha256((self._prev + _canonical(core)).encode()).hexdigest()[:16]
        core["checksum"] = chk
        self._fh.write(_canonical(core) + "\n")
        self._prev = chk
        self.lines += 1

    def close(self):
        self.write({"kind": "eof", "lines": self.lines})
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_log(path) -> list:
    """Read and verify a JSONL run log; returns the records (without the eof
    marker). Raises LogChecksumError or TruncatedLog."""
    records = []
    prev = ""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            chk = rec.pop("checksum", None)
            want = hashlib.sha256((prev + _canonical(rec)).encode()).hexdigest()[:16]
            if chk != want:
                raise LogChecksumError(f"{path}:{lineno}: checksum mismatch")
            prev = chk
            records.append(rec)
    if not records or records[-1].get("kind") != "eof":
        raise TruncatedLog(f"{path}: missing end-of-log marker")
    eof = records.pop()
    if eof.get("lines") != len(records):
        raise TruncatedLog(f"{path}: line count mismatch")
    return records


# ---------------------------------------------------------------------------
# metrics


def _ci95(successes: int, n: int):
    p = successes / n
    half = 1.96 * math.sqrt(max(p * (1 - p), 0.0) / n)
    return [max(p - half, 0.0), min(p + half, 1.0)]


def _metrics_from_events(spec_dict: dict, episode_rows: dict) -> dict:
    """episode_rows: (cell idx) -> list of per-episode event lists."""
    cells = []
    for idx in sorted(episode_rows):
        runs = episode_rows[idx]
        n = len(runs)
        successes = 0
        ticks = []
        ticks_success = []
        latencies = []
        false_pos = 0
        verdict_hist: dict = {}
        for events in runs:
            end = next(e for e in events if e["kind"] == "episode_end")
            ok = bool(end["payload"]["success"])
            successes += ok
            ticks.append(end["payload"]["ticks"])
            if ok:
                ticks_success.append(end["payload"]["ticks"])
            rep = latency_report(events)
            latencies.extend(rep.latencies)
            false_pos += rep.false_positives
            for e in events:
                if e["kind"] == "verdict":
                    key = e["payload"].get("outcome", "?")
                    verdict_hist[key] = verdict_hist.get(key, 0) + 1
        cells.append(
            {
                "cell": idx,
                "episodes": n,
                "successes": successes,
                "success_rate": successes / n,
                "ci95": _ci95(successes, n),
                "mean_ticks": sum(ticks) / n,
                "mean_seconds": sum(ticks) / n / 20.0,
                "mean_ticks_success": (sum(ticks_success) / len(ticks_success)) if ticks_success else None,
                "mean_detection_latency": (sum(latencies) / len(latencies)) if latencies else None,
                "false_positives": false_pos,
                "verdicts": dict(sorted(verdict_hist.items())),
            }
        )
    return {"schema": SCHEMA_VERSION, "spec": spec_dict}, cells


def report_bytes(report: dict) -> bytes:
    return (json.dumps(_jsonable(report), sort_keys=True, indent=2) + "\n").encode()


# ---------------------------------------------------------------------------
# running


def _episode_config(spec: ExperimentSpec, cell: dict, seed: int) -> EpisodeConfig:
    dist = standard_disturbances(
        spec.task, cell["disturbances"], p=cell["drop_p"], q_cm=cell["place_noise_cm"]
    )
    return EpisodeConfig(
        template=spec.task,
        monitor_mode=cell["mode"],
        disturbances=dist,
        seed=seed,
        budget_ticks=spec.budget_ticks,
        tracker=spec.tracker,
        debounce=spec.debounce,
        max_retries=spec.max_retries,
    )


def run_spec(spec: ExperimentSpec, log_writer: JsonlLogWriter | None = None, progress=None) -> dict:
    """Execute the grid; returns the metrics report dict."""
    spec_dict = spec.as_dict()
    if log_writer is not None:
        log_writer.write({"kind": "meta", "schema": SCHEMA_VERSION, "spec": spec_dict})
    episode_rows: dict = {}
    cells = spec.cells()
    for idx, cell in enumerate(cells):
        runs = []
        for j in range(spec.episodes):
            seed = spec.seed_base + j
            result = run_episode(_episode_config(spec, cell, seed))
            events = [_jsonable(e) for e in result.events]
            runs.append(events)
            if log_writer is not None:
                for e in events:
                    log_writer.write({"cell": idx, "episode": j, **e})
            if progress is not None and (j + 1) % 20 == 0:
                progress(f"cell {idx + 1}/{len(cells)} episode {j + 1}/{spec.episodes}")
        episode_rows[idx] = runs
    _, cell_metrics = _metrics_from_events(spec_dict, episode_rows)
    for idx, cell in enumerate(cells):
        cell_metrics[idx]["key"] = cell
    return {"schema": SCHEMA_VERSION, "spec": spec_dict, "cells": cell_metrics}


def replay_log(path) -> dict:
    """Recompute the metrics report from a run log (no re-simulation)."""
    records = read_log(path)
    if not records or records[0].get("kind") != "meta":
        raise CamlabError(f"{path}: missing meta header")
    meta = records[0]
    if meta.get("schema") != SCHEMA_VERSION:
        raise CamlabError(f"{path}: log schema {meta.get('schema')} != {SCHEMA_VERSION}")
    spec_dict = meta["spec"]
    episode_rows: dict = {}
    for rec in records[1:]:
        idx = rec["cell"]
        j = rec["episode"]
        episode_rows.setdefault(idx, {}).setdefault(j, []).append(
            {k: v for k, v in rec.items() if k not in ("cell", "episode")}
        )
    rows = {idx: [events for _, events in sorted(eps.items())] for idx, eps in episode_rows.items()}
    _, cell_metrics = _metrics_from_events(spec_dict, rows)
    spec = ExperimentSpec(
        task=spec_dict["task"],
        episodes=spec_dict["episodes"],
        seed_base=spec_dict["seed_base"],
        modes=tuple(spec_dict["modes"]),
        drop_p=tuple(spec_dict["drop_p"]),
        place_noise_cm=tuple(spec_dict["place_noise_cm"]),
        disturbances=tuple(spec_dict["disturbances"]),
        budget_ticks=spec_dict["budget_ticks"],
        tracker=TrackerConfig(
            sigma=spec_dict["tracker"]["sigma"],
            dropout=spec_dict["tracker"]["dropout"],
            resync_interval=spec_dict["tracker"]["resync"],
        ),
        debounce=DebouncePolicy(**spec_dict["debounce"]),
        max_retries=spec_dict["max_retries"],
    )
    for idx, cell in enumerate(spec.cells()):
        if idx in rows:
            cell_metrics[idx]["key"] = cell
    return {"schema": SCHEMA_VERSION, "spec": spec_dict, "cells": cell_metrics}


def _print_table(report: dict, out=sys.stdout):
    print(f"task: {report['spec']['task']}  episodes/cell: {report['spec']['episodes']}", file=out)
    hdr = f"{'cell':<40} {'succ':>6} {'rate':>7} {'ci95':>17} {'ticks':>7} {'lat':>6} {'fp':>4}"
    print(hdr, file=out)
    print("-" * len(hdr), file=out)
    for c in report["cells"]:
        key = c.get("key", {})
        name = f"{key.get('mode', '?')} p={key.get('drop_p', 0)} q={key.get('place_noise_cm', 0)} d={key.get('disturbances', 'none')}"
        lat = c["mean_detection_latency"]
        lat_s = "-" if lat is None else f"{lat:.1f}"
        print(
            f"{name:<40} {c['successes']:>3}/{c['episodes']:<3} {c['success_rate']:>6.1%} "
            f"[{c['ci95'][0]:.2f}, {c['ci95'][1]:.2f}]   {c['mean_ticks']:>7.0f} "
            f"{lat_s:>6} {c['false_positives']:>4}",
            file=out,
        )


# ---------------------------------------------------------------------------
# validate + bench


def validate_dsl(path, task: str = "stack_in_order") -> list:
    """Parse/typecheck/whitebox a DSL source file against a scene snapshot.

    Binds e(0) to the end-effector and e(1..) to the task's first-subgoal
    elements, extracted from a seed-0 scene. Returns a list of problem
    strings (empty when the program validates)."""
    from camlab.conlang import EvalContext, load_default_kb, parse, typecheck, whitebox_validate
    from camlab.conlang.check import ValidationFailure
    from camlab.conlang.parser import DslSyntaxError, DuplicateTolerance
    from camlab.elementizer import end_effector_element, extract_element, make_element_set
    from camlab.simlab import Simulation, build_scene, mask_bundle, render, scene_summary
    from camlab.taskgen import Planner

    with open(path, encoding="utf-8") as fh:
        source = fh.read()
    state, scene = build_scene(task, np.random.default_rng(0))
    sim = Simulation(state)
    planner = Planner(task, load_default_kb(), scene.meta)
    sg = planner.plan_next(scene_summary(state, scene))
    views = render(state, scene)
    protos = [end_effector_element([state.ee_pose.t])]
    for espec in sg.element_specs:
        protos.append(
            extract_element(
                mask_bundle(scene, views, espec.oid, espec.part, espec.etype), [v[0] for v in views], scene.cameras
            )
        )
    es = make_element_set(protos, "validate")
    problems = []
    try:
        prog = parse(source)
    except (DslSyntaxError, DuplicateTolerance) as err:
        return [f"parse: {err}"]
    problems.extend(f"typecheck: {i}" for i in typecheck(prog, es))
    if not problems:
        ctx = EvalContext.from_points(
            0, {e.eid: e.points for e in es.elements}, {e.eid: e.etype for e in es.elements}
        )
        try:
            whitebox_validate(prog, ctx)
        except ValidationFailure as err:
            problems.append(f"whitebox: {err}")
    return problems


def bench_monitor(n_ticks: int = 10000, n_elements: int = 16, n_programs: int = 8) -> dict:
    """monitor_tick latency benchmark (median/p95 over n_ticks)."""
    from camlab.conlang import parse
    from camlab.elementizer import end_effector_element, make_element_set

    rng = np.random.default_rng(0)
    protos = [end_effector_element([(0.0, 0.0, 0.1)])]
    for i in range(n_elements - 1):
        protos.append(end_effector_element(rng.uniform(-0.2, 0.2, size=(1, 3)), entity=f"obj{i}"))
    es = make_element_set(protos, "bench")
    programs = []
    for i in range(n_programs):
        a = i % n_elements
        b = (i + 1) % n_elements
        src = (
            f'constraint "c{i}" mode during tol lim = 10 m '
            f"{{ dist(centroid(e({a})), centroid(e({b}))) <= lim and displacement(e({a}), 8) <= lim }} "
            f'fail "r"'
        )
        programs.append(parse(src, cid=f"c{i}"))
    tracker = SimTracker(TrackerConfig(sigma=0.001, dropout=0.01, seed=1))
    tracker.register(es, 0)
    mon = RealTimeMonitor(programs, tracker, DebouncePolicy())
    truth = {e.eid: e.points for e in es.elements}
    samples = []
    for t in range(1, n_ticks + 1):
        tracker.step(truth, t)
        t0 = time.perf_counter()
        mon.monitor_tick(t)
        samples.append(time.perf_counter() - t0)
    samples.sort()
    return {
        "ticks": n_ticks,
        "elements": n_elements,
        "programs": n_programs,
        "median_ms": 1000 * statistics.median(samples),
        "p95_ms": 1000 * samples[int(0.95 * len(samples))],
        "max_ms": 1000 * samples[-1],
    }


# ---------------------------------------------------------------------------
# CLI


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="camctl", description="experiment harness")
    sub = ap.add_subparsers(dest="cmd", required=True)

    run_p = sub.add_parser("run", help="run an experiment spec")
    run_p.add_argument("spec")
    run_p.add_argument("--out", default="camctl_out")

    rep_p = sub.add_parser("replay", help="recompute metrics from a run log")
    rep_p.add_argument("log")
    rep_p.add_argument("--report", default=None, help="compare against this report file")

    val_p = sub.add_parser("validate", help="validate a DSL monitor file")
    val_p.add_argument("file")
    val_p.add_argument("--task", default="stack_in_order", choices=TEMPLATES)

    ben_p = sub.add_parser("bench", help="monitor_tick latency benchmark")
    ben_p.add_argument("--ticks", type=int, default=10000)

    args = ap.parse_args(argv)

    if args.cmd == "run":
        try:
            spec = ExperimentSpec.load(args.spec)
        except (OSError, ValueError) as err:
            print(f"camctl: bad spec: {err}", file=sys.stderr)
            return 2
        os.makedirs(args.out, exist_ok=True)
        log_path = os.path.join(args.out, "run.jsonl")
        report_path = os.path.join(args.out, "report.json")
        try:
            with JsonlLogWriter(log_path) as w:
                report = run_spec(spec, w, progress=lambda s: print(s, file=sys.stderr))
        except CamlabError as err:
            print(f"camctl: internal error: {err}", file=sys.stderr)
            return 3
        with open(report_path, "wb") as fh:
            fh.write(report_bytes(report))
        _print_table(report)
        print(f"log: {log_path}\nreport: {report_path}", file=sys.stderr)
        return 0

    if args.cmd == "replay":
        try:
            report = replay_log(args.log)
        except (TruncatedLog, LogChecksumError, CamlabError) as err:
            print(f"camctl: {err}", file=sys.stderr)
            return 2
        _print_table(report)
        if args.report:
            with open(args.report, "rb") as fh:
                if fh.read() != report_bytes(report):
                    print("camctl: replayed report differs from the original", file=sys.stderr)
                    return 3
            print("replay matches the original report", file=sys.stderr)
        return 0

    if args.cmd == "validate":
        try:
            problems = validate_dsl(args.file, args.task)
        except (OSError, CamlabError) as err:
            print(f"camctl: {err}", file=sys.stderr)
            return 2
        if problems:
            for p in problems:
                print(p)
            return 2
        print("ok")
        return 0

    if args.cmd == "bench":
        stats = bench_monitor(n_ticks=args.ticks)
        for k, v in stats.items():
            print(f"{k}: {v:.4f}" if isinstance(v, float) else f"{k}: {v}")
        return 0

    return 2


if __name__ == "__main__":
    sys.exit(main())
