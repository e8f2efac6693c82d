"""camlab: constraint-element failure monitoring at desk scale.

Subpackages/modules map one-to-one onto the system's stages: geom3d (3D
math), elementizer (point clouds to constraint elements), conlang (the
monitor DSL), monitor (real-time tracking + verdicts), taskgen (rule-based
planner), simlab (deterministic toy simulator), camctl (CLI + experiment
harness).
"""

__version__ = "0.1.0"
