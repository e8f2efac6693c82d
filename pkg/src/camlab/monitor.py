"""Real-time monitoring loop: element tracking, histories, verdicts.

A SimTracker stands in for a learned visual tracker: ground truth plus
isotropic Gaussian noise, per-point dropout (hold last value, flag invalid),
and a periodic resync snap to truth that models re-detection. Elements
sourced from forward kinematics are served noiselessly.

The RealTimeMonitor evaluates DURING programs every tick with a K-tick
debounce (a single noise spike never trips a violation) and ON_COMPLETION
programs after the policy motion ends, requiring an H-tick hold within a
3H-tick timeout. A persistent violation is reported once per constraint
until the planner acknowledges, so there are no verdict storms. Runtime
evaluation errors surface as violations (fail-safe), never as skipped ticks.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from camlab.conlang import EvalContext, EvalError, Mode, evaluate, max_history_ticks
from camlab.errors import TrackError

__all__ = [
    "TrackerConfig",
    "ElementTrack",
    "SimTracker",
    "DebouncePolicy",
    "VerdictKind",
    "Verdict",
    "RealTimeMonitor",
    "LatencyReport",
    "latency_report",
]

INTERNAL_ERROR_REASON = "monitor internal error"


@dataclass(frozen=True)
class TrackerConfig:
    sigma: float = 0.002  # meters, isotropic per point
    dropout: float = 0.01  # per point per tick
    resync_interval: int = 20  # ticks; snap to truth exactly
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0 or not (0.0 <= self.dropout < 1.0) or self.resync_interval < 1:
            raise ValueError("bad tracker config")


class ElementTrack:
    """Ring buffer of (tick, points, valid) for one element.

    Indexing returns the point array (oldest first) so a track can be used
    directly as an EvalContext history."""

    def __init__(self, eid: int, capacity: int = 256):
        self.eid = eid
        self.capacity = capacity
        self.entries: deque = deque(maxlen=capacity)

    def append(self, tick: int, points: np.ndarray, valid: np.ndarray):
        if self.entries and tick <= self.entries[-1][0]:
            raise TrackError(f"ticks must increase, got {tick} after {self.entries[-1][0]}")
        self.entries.append((tick, points, valid))

    def latest(self):
        return self.entries[-1]

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, i: int) -> np.ndarray:
        return self.entries[i][1]


class SimTracker:
    """Noisy tracker over ground-truth element points."""

    def __init__(self, cfg: TrackerConfig = TrackerConfig(), capacity: int = 256):
        self.cfg = cfg
        self.capacity = capacity
        self.rng = np.random.default_rng(cfg.seed)
        self.tracks: dict = {}
        self.fk_eids: set = set()
        self.element_types: dict = {}

    def register(self, element_set, tick: int, fk_eids=()):
        """Start tracks for a fresh element set, seeded with the extraction
        snapshot (exact, all points valid)."""
        self.tracks = {}
        self.fk_eids = set(fk_eids)
        self.element_types = {e.eid: e.etype for e in element_set.elements}
        for el in element_set.elements:
            tr = ElementTrack(el.eid, self.capacity)
            tr.append(tick, el.points.copy(), np.ones(len(el.points), dtype=bool))
            self.tracks[el.eid] = tr

    def step(self, truth: dict, tick: int):
        """Advance every track one tick from ground-truth points.

        Per point: with probability dropout hold the previous value and mark
        it invalid, otherwise truth + N(0, sigma^2 I3). Every resync interval
        the track snaps to truth exactly. FK-sourced elements are always
        exact. Raises TrackError for id mismatches."""
        unknown = set(truth) - set(self.tracks)
        missing = set(self.tracks) - set(truth)
        if unknown or missing:
            raise TrackError(f"unknown ids {sorted(unknown)}, missing ids {sorted(missing)}")
        for eid in sorted(self.tracks):
            tr = self.tracks[eid]
            pts = np.asarray(truth[eid], dtype=np.float64)
            k = len(pts)
            if eid in self.fk_eids or tick % self.cfg.resync_interval == 0:
                tr.append(tick, pts.copy(), np.ones(k, dtype=bool))
                continue
            drop = self.rng.random(k) < self.cfg.dropout
            noise = self.rng.normal(0.0, self.cfg.sigma, size=(k, 3)) if self.cfg.sigma > 0 else np.zeros((k, 3))
            prev = tr.latest()[1]
            new = np.where(drop[:, None], prev, pts + noise)
            tr.append(tick, new, ~drop)
        return self.tracks


@dataclass(frozen=True)
class DebouncePolicy:
    k: int = 3  # consecutive violating ticks before a DURING violation
    h: int = 5  # hold ticks required for completion

    def __post_init__(self):
        if self.k < 1 or self.h < 1:
            raise ValueError("debounce K and H must be >= 1")


class VerdictKind(str, Enum):
    OK = "ok"
    VIOLATION = "violation"
    SUBGOAL_COMPLETE = "subgoal_complete"
    NOT_YET = "not_yet"


@dataclass(frozen=True)
class Verdict:
    tick: int
    kind: VerdictKind
    cid: str = ""
    mode: Mode | None = None
    reason: str = ""

    @property
    def is_violation(self) -> bool:
        return self.kind is VerdictKind.VIOLATION


class RealTimeMonitor:
    """Evaluates a subgoal's programs against tracked element state."""

    def __init__(self, programs, tracker: SimTracker, policy: DebouncePolicy = DebouncePolicy(), tolerances=None):
        self.during = [p for p in programs if p.mode is Mode.DURING]
        self.completion = [p for p in programs if p.mode is Mode.ON_COMPLETION]
        self.tracker = tracker
        self.policy = policy
        self.tolerances = dict(tolerances or {})
        self._false_streak = {p.cid: 0 for p in self.during}
        self._reported: set = set()
        self._motion_end: int | None = None
        self._hold_streak = 0
        for p in programs:
            need = max_history_ticks(p.body)
            if need >= tracker.capacity:
                raise ValueError(
                    f"program '{p.cid}' reaches {need} ticks back, capacity {tracker.capacity}"
                )

    def context(self, tick: int) -> EvalContext:
        return EvalContext(tick, self.tracker.tracks, self.tracker.element_types, self.tolerances)

    def acknowledge(self):
        """Planner acknowledgment: re-arm violation reporting."""
        self._reported.clear()
        for cid in self._false_streak:
            self._false_streak[cid] = 0

    def monitor_tick(self, tick: int) -> Verdict:
        """Evaluate all DURING programs; a program false K ticks in a row
        yields a Violation (first program in id order wins the tick)."""
        ctx = self.context(tick)
        verdict = None
        for prog in self.during:
            try:
                ok, reason = evaluate(prog, ctx)
            except EvalError:
                ok, reason = False, INTERNAL_ERROR_REASON  # fail-safe
            if ok:
                self._false_streak[prog.cid] = 0
                continue
            self._false_streak[prog.cid] += 1
            if (
                verdict is None
                and self._false_streak[prog.cid] >= self.policy.k
                and prog.cid not in self._reported
            ):
                verdict = Verdict(tick, VerdictKind.VIOLATION, prog.cid, Mode.DURING, reason)
        if verdict is not None:
            self._reported.add(verdict.cid)
            return verdict
        return Verdict(tick, VerdictKind.OK)

    def note_motion_end(self, tick: int):
        if self._motion_end is None:
            self._motion_end = tick
            self._hold_streak = 0

    def next_verdict(self, tick: int, motion_done: bool = False) -> Verdict:
        """Pull API for the planner: one verdict for the current tick state.

        While the policy is moving this runs the DURING checks; after motion
        ends it drives the completion hold."""
        if motion_done and self.completion:
            self.note_motion_end(tick)
            return self.check_completion(tick)
        if motion_done:
            return Verdict(tick, VerdictKind.SUBGOAL_COMPLETE)
        return self.monitor_tick(tick)

    def check_completion(self, tick: int) -> Verdict:
        """After motion end: SUBGOAL_COMPLETE once every ON_COMPLETION program
        has held for H consecutive ticks; a Violation if any is still false
        3H ticks after motion end; NOT_YET in between."""
        if self._motion_end is None:
            raise ValueError("check_completion before motion end")
        ctx = self.context(tick)
        first_bad = None
        for prog in self.completion:
            try:
                ok, reason = evaluate(prog, ctx)
            except EvalError:
                ok, reason = False, INTERNAL_ERROR_REASON
            if not ok and first_bad is None:
                first_bad = (prog.cid, reason)
        if first_bad is None:
            self._hold_streak += 1
            if self._hold_streak >= self.policy.h:
                return Verdict(tick, VerdictKind.SUBGOAL_COMPLETE)
        else:
            self._hold_streak = 0
            if tick - self._motion_end >= 3 * self.policy.h:
                return Verdict(
                    tick, VerdictKind.VIOLATION, first_bad[0], Mode.ON_COMPLETION, first_bad[1]
                )
        return Verdict(tick, VerdictKind.NOT_YET)


@dataclass
class LatencyReport:
    pairs: list = field(default_factory=list)  # (injection_tick, verdict_tick, latency)
    false_positives: int = 0
    unmatched_injections: list = field(default_factory=list)

    @property
    def latencies(self):
        return [p[2] for p in self.pairs]


def latency_report(events) -> LatencyReport:
    """Match violation verdicts to disturbance injections in an event log.

    Each violation is paired with the most recent unmatched injection at or
    before its tick; a violation with no available injection counts as a
    false positive. Events are dicts with at least {kind, tick}."""
    report = LatencyReport()
    open_injections: list = []
    for ev in events:
        outcome = ev.get("outcome") or ev.get("payload", {}).get("outcome")
        if ev["kind"] == "injection":
            open_injections.append(int(ev["tick"]))
        elif ev["kind"] == "verdict" and outcome == "violation":
            tick = int(ev["tick"])
            candidates = [t for t in open_injections if t <= tick]
            if candidates:
                inj = max(candidates)
                open_injections.remove(inj)
                report.pairs.append((inj, tick, tick - inj))
            else:
                report.false_positives += 1
    report.unmatched_injections = sorted(open_injections)
    return report
