"""Python access to the patchforge core."""

from ._patchforge import (
    PatchforgeError,
    apply_creases,
    average_precision,
    crease_multiplier,
    load_patch,
    print_pixels,
    run_cli,
    similarity_loss,
    tv_loss,
)

__all__ = [
    "PatchforgeError",
    "apply_creases",
    "average_precision",
    "crease_multiplier",
    "load_patch",
    "print_pixels",
    "run_cli",
    "similarity_loss",
    "tv_loss",
]
