"""Online teacher-student distillation for streaming detection.

Tensors are numpy arrays of shape (s * s, 5 + classes) in row-major cell
order: objectness, tx, ty, tw, th, then class logits.
"""

from ._tkd import (
    ConfigError,
    FormatError,
    ablate,
    bench,
    compose_target,
    generate,
    high_cells,
    next_probability,
    run,
    tkd_loss,
    tkd_loss_terms,
)

__all__ = [
    "ConfigError",
    "FormatError",
    "ablate",
    "bench",
    "compose_target",
    "generate",
    "high_cells",
    "next_probability",
    "run",
    "tkd_loss",
    "tkd_loss_terms",
]
