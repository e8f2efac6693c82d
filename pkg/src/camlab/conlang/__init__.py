"""The monitor DSL: grammar, parser, checker, evaluator, threshold KB."""

from camlab.conlang.ast import (
    AXES,
    BUILTINS,
    UNITS,
    At,
    AxisRef,
    BinOp,
    Call,
    ElemList,
    ElemRef,
    IfElse,
    Mode,
    MonitorProgram,
    Num,
    ToleranceDecl,
    TolRef,
    Unary,
    Within,
    max_history_ticks,
    pretty,
)
from camlab.conlang.check import TypeIssue, ValidationFailure, typecheck, whitebox_validate
from camlab.conlang.evaluator import EvalContext, EvalError, evaluate, format_measured
from camlab.conlang.kb import KIND_FALLBACKS, ThresholdKB, kb_lookup, load_default_kb
from camlab.conlang.parser import DslSyntaxError, DuplicateTolerance, parse

__all__ = [
    "AXES",
    "BUILTINS",
    "UNITS",
    "At",
    "AxisRef",
    "BinOp",
    "Call",
    "DslSyntaxError",
    "DuplicateTolerance",
    "ElemList",
    "ElemRef",
    "EvalContext",
    "EvalError",
    "IfElse",
    "KIND_FALLBACKS",
    "Mode",
    "MonitorProgram",
    "Num",
    "ThresholdKB",
    "TolRef",
    "ToleranceDecl",
    "TypeIssue",
    "Unary",
    "ValidationFailure",
    "Within",
    "evaluate",
    "format_measured",
    "kb_lookup",
    "load_default_kb",
    "max_history_ticks",
    "parse",
    "pretty",
    "typecheck",
    "whitebox_validate",
]
