"""Mesh deformation from projections: regularizers, remeshing and the optimizer."""
from .energies import edge_energy, flatten_energy, laplacian_energy
from .optimize import (HistoryRow, OptConfig, OptState, Reconstruction, RegWeights, adam_step,
                       objective, reconstruct)
from .remesh import RemeshWarning, cleanup, refine

__all__ = [
    "HistoryRow", "OptConfig", "OptState", "Reconstruction", "RegWeights", "RemeshWarning",
    "adam_step", "cleanup", "edge_energy", "flatten_energy", "laplacian_energy", "objective",
    "reconstruct", "refine",
]
