"""The fdctmc modeling language: parsing, elaboration and flat export."""

from .elaborate import (
    ElaborationError,
    elaborate,
    export_model,
    load_model,
    same_structure,
    unused_events,
)
from .parser import Ast, ParseError, parse

__all__ = [
    "Ast",
    "ElaborationError",
    "ParseError",
    "elaborate",
    "export_model",
    "load_model",
    "parse",
    "same_structure",
    "unused_events",
]
