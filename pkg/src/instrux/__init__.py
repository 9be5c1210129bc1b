"""instrux: declarative multi-modal instructions compiled to trainable task plans."""

from .instruction import (
    InstructionAST,
    SlotTypeRegistry,
    default_registry,
    parse,
    register_prompt_slot,
    register_slot_type,
    render,
    structurally_equal,
)

__all__ = [
    "InstructionAST",
    "SlotTypeRegistry",
    "default_registry",
    "parse",
    "register_prompt_slot",
    "register_slot_type",
    "render",
    "structurally_equal",
]

__version__ = "0.1.0"
