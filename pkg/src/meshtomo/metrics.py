"""Comparison metrics between projection stacks."""
import numpy as np

from .geometry import ProjectionStack


def residual_projection_error(p: ProjectionStack, ref: ProjectionStack) -> float:
    """Unnormalized L2 norm of ``p - ref`` over pixels valid in both stacks."""
    a = p.data if isinstance(p, ProjectionStack) else np.asarray(p, dtype=float)
    b = ref.data if isinstance(ref, ProjectionStack) else np.asarray(ref, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"stack shapes differ: {a.shape} vs {b.shape}")
    valid = np.ones(a.shape, dtype=bool)
    for s in (p, ref):
        if isinstance(s, ProjectionStack):
            valid &= s.valid
    d = (a - b)[valid]
    return float(np.sqrt(np.sum(d * d)))
