"""Deterministic tick-based toy simulator: worlds, policies, disturbances,
rendering, and the closed-loop episode runner."""

from camlab.simlab.disturb import CARRY_REF_TICKS, Disturbance, DisturbanceInjector
from camlab.simlab.episode import MONITOR_MODES, EpisodeConfig, EpisodeResult, run_episode
from camlab.simlab.policy import build_script
from camlab.simlab.scenes import (
    TEMPLATES,
    Scene,
    TaskBookkeeper,
    build_scene,
    default_cameras,
    mask_bundle,
    oracle_success,
    render,
    scene_summary,
)
from camlab.simlab.world import (
    CONTINUE,
    DONE,
    DT,
    END_EFFECTOR,
    HALT_AND_REPLAN,
    TICK_HZ,
    WORLD,
    PolicyRuntime,
    PolicyScript,
    Simulation,
    SimObject,
    SimState,
    Waypoint,
    box_shape,
    cylinder_shape,
)

__all__ = [
    "CARRY_REF_TICKS",
    "CONTINUE",
    "DONE",
    "DT",
    "END_EFFECTOR",
    "HALT_AND_REPLAN",
    "MONITOR_MODES",
    "TEMPLATES",
    "TICK_HZ",
    "WORLD",
    "Disturbance",
    "DisturbanceInjector",
    "EpisodeConfig",
    "EpisodeResult",
    "PolicyRuntime",
    "PolicyScript",
    "Scene",
    "SimObject",
    "SimState",
    "Simulation",
    "TaskBookkeeper",
    "Waypoint",
    "box_shape",
    "build_scene",
    "build_script",
    "cylinder_shape",
    "default_cameras",
    "mask_bundle",
    "oracle_success",
    "render",
    "run_episode",
    "scene_summary",
]
