"""The full closed loop: plan, extract elements, monitor, step, recover.

One episode = one task template run end to end. At every subgoal start the
scene is rendered, constraint elements are extracted, DSL programs are
generated, type-checked, and white-box validated (one relaxed retry, then
abort). The monitor then runs per tick; violations feed back into the
planner; completion is confirmed with a settle hold. Monitor modes:

  off            no monitoring at all, policy runs open loop
  reactive_only  only on-completion checks
  proactive_only only during checks, subgoals complete at motion end
  full           both
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from camlab.conlang import EvalContext, EvalError, evaluate, load_default_kb, parse, typecheck, whitebox_validate
from camlab.conlang.check import ValidationFailure
from camlab.elementizer import (
    ExtractParams,
    element_set_fingerprint,
    end_effector_element,
    extract_element,
    make_element_set,
)
from camlab.errors import CamlabError
from camlab.monitor import DebouncePolicy, RealTimeMonitor, SimTracker, TrackerConfig, VerdictKind
from camlab.simlab.disturb import DisturbanceInjector
from camlab.simlab.policy import build_script
from camlab.simlab.scenes import TaskBookkeeper, build_scene, mask_bundle, oracle_success, render, scene_summary
from camlab.simlab.world import CONTINUE, HALT_AND_REPLAN, Simulation
from camlab.taskgen import FailureFeedback, Planner, Subgoal, TaskAbort, TaskDone

__all__ = ["EpisodeConfig", "EpisodeResult", "run_episode", "MONITOR_MODES"]

MONITOR_MODES = ("off", "reactive_only", "proactive_only", "full")


@dataclass(frozen=True)
class EpisodeConfig:
    template: str
    monitor_mode: str = "full"
    disturbances: tuple = ()
    seed: int = 0
    budget_ticks: int = 1400
    tracker: TrackerConfig = TrackerConfig()
    debounce: DebouncePolicy = DebouncePolicy()
    max_retries: int = 5
    extract: ExtractParams = ExtractParams(max_cloud_points=500)

    def __post_init__(self):
        if self.monitor_mode not in MONITOR_MODES:
            raise ValueError(f"monitor_mode must be one of {MONITOR_MODES}")


@dataclass
class EpisodeResult:
    success: bool
    ticks: int
    events: list
    oracle: bool
    planner_done: bool
    aborted: str | None = None

    @property
    def verdicts(self):
        return [e for e in self.events if e["kind"] == "verdict"]

    @property
    def injections(self):
        return [e for e in self.events if e["kind"] == "injection"]


class _Bound:
    """Everything the monitor needs for one subgoal."""

    def __init__(self, monitor, tracker, truth_specs, element_set):
        self.monitor = monitor
        self.tracker = tracker
        self.truth_specs = truth_specs  # (eid, oid-or-None, local points)
        self.element_set = element_set

    def truth(self, sim: Simulation) -> dict:
        out = {}
        for eid, oid, local in self.truth_specs:
            if oid is None:
                out[eid] = sim.state.ee_pose.t.reshape(1, 3)
            else:
                out[eid] = sim.state.objects[oid].pose.apply(local)
        return out


def _bind_monitor(sg: Subgoal, sim, scene, cfg: EpisodeConfig, use_during, use_completion, tracker_seed):
    """Extract elements, validate programs, start tracker + monitor.

    Raises ValidationFailure/CamlabError on any extraction or validation
    problem; the caller gets one relaxed retry before aborting the episode.
    """
    state = sim.state
    views = render(state, scene)
    depths = [v[0] for v in views]
    cams = scene.cameras
    protos = [end_effector_element([state.ee_pose.t])]
    locals_ = [None]
    for spec in sg.element_specs:
        bundle = mask_bundle(scene, views, spec.oid, spec.part, spec.etype, sg.text)
        el = extract_element(bundle, depths, cams, cfg.extract)
        protos.append(el)
        obj = state.objects[spec.oid]
        locals_.append((spec.oid, obj.pose.inverse().apply(el.points)))
    es = make_element_set(protos, sg.sid)
    state.log(
        "element_extract",
        sid=sg.sid,
        ids=[e.eid for e in es.elements],
        types=[e.etype.short() for e in es.elements],
        fingerprint=element_set_fingerprint(es),
    )

    specs = list(sg.during if use_during else ()) + list(sg.completion if use_completion else ())
    programs = []
    ctx = EvalContext.from_points(
        state.tick,
        {e.eid: e.points for e in es.elements},
        {e.eid: e.etype for e in es.elements},
    )
    for ps in specs:
        prog = parse(ps.source, cid=ps.cid)
        issues = typecheck(prog, es)
        if issues:
            raise ValidationFailure(f"typecheck of '{ps.cid}'", "; ".join(str(i) for i in issues))
        whitebox_validate(prog, ctx)
        programs.append(prog)
    state.log("programs", sid=sg.sid, sources=[ps.source for ps in specs])

    tracker = SimTracker(replace(cfg.tracker, seed=tracker_seed))
    tracker.register(es, state.tick, fk_eids=(0,))
    monitor = RealTimeMonitor(programs, tracker, cfg.debounce)
    truth_specs = [(0, None, None)] + [
        (i + 1, locals_[i + 1][0], locals_[i + 1][1]) for i in range(len(sg.element_specs))
    ]
    return _Bound(monitor, tracker, truth_specs, es)


def _run_subgoal(sg: Subgoal, sim, scene, bound, book, cfg, use_during, use_completion):
    """Tick until the subgoal resolves.

    Returns "complete", "budget", or a FailureFeedback."""
    state = sim.state
    halted = False
    entered_streak = 0
    while state.tick < cfg.budget_ticks:
        sim.step(HALT_AND_REPLAN if halted else CONTINUE)
        book.after_tick(state)
        if bound is None:
            if sim.motion_done:
                state.log("subgoal_complete", sid=sg.sid)
                return "complete"
            continue
        bound.tracker.step(bound.truth(sim), state.tick)
        mon = bound.monitor
        in_motion = not sim.motion_done and not halted
        if in_motion:
            if use_during and mon.during:
                v = mon.monitor_tick(state.tick)
                if v.is_violation:
                    state.log("verdict", outcome="violation", cid=v.cid, mode=v.mode.value, reason=v.reason)
                    return FailureFeedback(sg.sid, v.reason, v.cid, v.mode)
            if sg.halt_on_completion and use_completion and mon.completion:
                ctx = mon.context(state.tick)
                try:
                    entered = all(evaluate(p, ctx)[0] for p in mon.completion)
                except EvalError:
                    entered = False
                # debounce the halt trigger (same K as violations) so objects
                # still moving across the region boundary settle clearly inside
                entered_streak = entered_streak + 1 if entered else 0
                if entered_streak >= cfg.debounce.k:
                    halted = True
                    sim.policy.halt()
                    sim.detach_all()
                    mon.note_motion_end(state.tick)
                    state.log("halt", sid=sg.sid)
            continue
        # motion finished (or halted): completion phase
        if use_completion and mon.completion:
            mon.note_motion_end(state.tick)
            v = mon.check_completion(state.tick)
            if v.kind is VerdictKind.SUBGOAL_COMPLETE:
                state.log("verdict", outcome="subgoal_complete", sid=sg.sid)
                return "complete"
            if v.is_violation:
                state.log("verdict", outcome="violation", cid=v.cid, mode=v.mode.value, reason=v.reason)
                return FailureFeedback(sg.sid, v.reason, v.cid, v.mode)
        else:
            state.log("subgoal_complete", sid=sg.sid)
            return "complete"
    return "budget"


def run_episode(cfg: EpisodeConfig) -> EpisodeResult:
    ss = np.random.SeedSequence(cfg.seed)
    layout_ss, disturb_ss, tracker_ss = ss.spawn(3)
    state, scene = build_scene(cfg.template, np.random.default_rng(layout_ss))
    injector = DisturbanceInjector(cfg.disturbances, np.random.default_rng(disturb_ss))
    sim = Simulation(state, injector)
    book = TaskBookkeeper(cfg.template, scene)
    kb = load_default_kb()
    planner = Planner(cfg.template, kb, scene.meta, max_retries=cfg.max_retries)
    tracker_seeds = tracker_ss.generate_state(64)

    monitored = cfg.monitor_mode != "off"
    use_during = cfg.monitor_mode in ("proactive_only", "full")
    use_completion = cfg.monitor_mode in ("reactive_only", "full")

    state.log("episode_start", template=cfg.template, mode=cfg.monitor_mode, seed=cfg.seed)
    l_pre, f_pre = None, None
    aborted = None
    planner_done = False
    subgoal_n = 0

    while state.tick < cfg.budget_ticks:
        nxt = planner.plan_next(scene_summary(state, scene), l_pre, f_pre)
        f_pre = None
        if isinstance(nxt, TaskDone):
            planner_done = True
            break
        if isinstance(nxt, TaskAbort):
            aborted = nxt.reason
            state.log("abort", reason=nxt.reason)
            break
        sg = nxt
        state.log("subgoal_start", sid=sg.sid, text=sg.text, script=sg.script_id)
        injector.on_script_start(sg.base_sid, state.tick)
        sim.set_policy(build_script(sim, scene, sg.script_id, sg.script_params, injector))

        bound = None
        if monitored:
            seed = int(tracker_seeds[subgoal_n % len(tracker_seeds)])
            subgoal_n += 1
            try:
                bound = _bind_monitor(sg, sim, scene, cfg, use_during, use_completion, seed)
            except (ValidationFailure, CamlabError) as err:
                state.log("validation_failure", sid=sg.sid, error=str(err))
                sg = planner.rebuild_relaxed(scene_summary(state, scene))
                sim.set_policy(build_script(sim, scene, sg.script_id, sg.script_params, injector))
                try:
                    bound = _bind_monitor(sg, sim, scene, cfg, use_during, use_completion, seed)
                except (ValidationFailure, CamlabError) as err2:
                    aborted = f"program regeneration failed for '{sg.sid}': {err2}"
                    state.log("abort", reason=aborted)
                    break

        outcome = _run_subgoal(sg, sim, scene, bound, book, cfg, use_during, use_completion)
        if outcome == "complete":
            l_pre, f_pre = sg.sid, None
        elif outcome == "budget":
            break
        else:
            l_pre, f_pre = sg.sid, outcome
            state.log("replan", sid=sg.sid, reason=outcome.reason)

    oracle = oracle_success(state, scene, book)
    success = bool(planner_done and oracle and aborted is None)
    state.log("episode_end", success=success, oracle=bool(oracle), ticks=state.tick,
              planner_done=planner_done, aborted=aborted)
    return EpisodeResult(
        success=success,
        ticks=state.tick,
        events=state.events,
        oracle=bool(oracle),
        planner_done=planner_done,
        aborted=aborted,
    )
