"""Shape and attenuation estimation by gradient descent on the projection misfit.

The objective is ``||p - p_hat||^2 + alpha E_lap + beta E_edge + gamma E_flat``
over the valid pixels; vertices and (optionally) attenuations are updated
with Adam.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .. import projector
from ..geometry import AIR, MaterialTable, Mesh, ProjectionStack, check_watertight
from . import energies
from .remesh import cleanup, refine

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RegWeights:
    alpha: float = 10.0
    beta: float = 4.0
    gamma: float = 0.01

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValueError("regularization weights must be nonnegative")


@dataclass(frozen=True)
class OptConfig:
    iterations: int = 500
    step_size: float = 0.01
    schedule: tuple = ((400, 0.5),)
    refine_at: tuple = (60,)
    repair_at: tuple = (60, 120, 180)
    reg: RegWeights = field(default_factory=RegWeights)
    solve_mu: bool = False
    mu_init: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        its = [int(i) for i, _ in self.schedule]
        if any(b <= a for a, b in zip(its, its[1:])):
            raise ValueError("schedule iterations must be strictly increasing")
        object.__setattr__(self, "schedule", tuple((int(i), float(m)) for i, m in self.schedule))
        object.__setattr__(self, "refine_at", tuple(int(i) for i in self.refine_at))
        object.__setattr__(self, "repair_at", tuple(int(i) for i in self.repair_at))

    def step_at(self, iteration: int) -> float:
        tau = self.step_size
        for it, mult in self.schedule:
            if iteration >= it:
                tau *= mult
        return tau


class HistoryRow(NamedTuple):
    iteration: int
    e_data: float
    e_lap: float
    e_edge: float
    e_flat: float
    e_total: float
    artifact_pixels: int


@dataclass
class OptState:
    mesh: Mesh
    materials: MaterialTable
    mu_free: np.ndarray
    m_vertices: np.ndarray
    v_vertices: np.ndarray
    m_mu: np.ndarray
    v_mu: np.ndarray
    adam_t: int = 0
    iteration: int = 0
    history: list = field(default_factory=list)

    @classmethod
    def start(cls, mesh: Mesh, materials: MaterialTable, mu_free=None) -> OptState:
        free = np.zeros(len(materials), dtype=bool) if mu_free is None else np.asarray(mu_free, dtype=bool).copy()
        free[AIR] = False
        zeros_v = np.zeros_like(mesh.vertices)
        zeros_mu = np.zeros(len(materials))
        return cls(mesh, materials, free, zeros_v, zeros_v.copy(), zeros_mu, zeros_mu.copy())

    def reset_moments(self) -> OptState:
        z = np.zeros_like(self.mesh.vertices)
        zm = np.zeros(len(self.materials))
        return replace(self, m_vertices=z, v_vertices=z.copy(), m_mu=zm, v_mu=zm.copy(), adam_t=0)


class _Topology:
    """Regularizer operators that only depend on connectivity."""

    def __init__(self, mesh: Mesh):
        self.faces = mesh.faces
        self.edges = mesh.edges()
        self.L = energies.umbrella_operator(mesh)
        self.pairs = energies.edge_face_pairs(mesh)

    @classmethod
    def of(cls, mesh: Mesh, cached: _Topology | None) -> _Topology:
        if cached is not None and cached.faces is mesh.faces:
            return cached
        return cls(mesh)


@dataclass
class ObjectiveValue:
    total: float
    e_data: float
    e_lap: float
    e_edge: float
    e_flat: float
    grads: projector.GradientBundle
    projection: projector.Projection

    @property
    def artifact_pixels(self) -> int:
        return self.projection.stack.diagnostics["artifact_pixels"]


def objective(mesh: Mesh, materials: MaterialTable, data: ProjectionStack, reg: RegWeights,
              threads=None, topology: _Topology | None = None) -> ObjectiveValue:
    """Objective value, its parts and the full gradient.

    Pixels invalid in either the data or the current projection (nonzero
    parity) are excluded from the data term.
    """
    proj = projector.project(mesh, materials, data.geometry, threads)
    valid = proj.stack.valid & data.valid
    r = np.where(valid, proj.stack.data - data.data, 0.0)
    e_data = float(np.sum(r * r))
    grads = projector.backward(mesh, materials, data.geometry, 2.0 * r, proj, threads)

    e_lap = e_edge = e_flat = 0.0
    if reg.alpha or reg.beta or reg.gamma:
        topo = _Topology.of(mesh, topology)
        e_lap, g_lap = energies.laplacian_energy(mesh, topo.L)
        e_edge, g_edge = energies.edge_energy(mesh, topo.edges)
        e_flat, g_flat, _ = energies.flatten_energy(mesh, topo.pairs)
        grads.d_vertices += reg.alpha * g_lap + reg.beta * g_edge + reg.gamma * g_flat
    total = e_data + reg.alpha * e_lap + reg.beta * e_edge + reg.gamma * e_flat
    return ObjectiveValue(total, e_data, e_lap, e_edge, e_flat, grads, proj)


BETA1, BETA2, ADAM_EPS = 0.9, 0.999, 1e-8


def adam_step(state: OptState, grads: projector.GradientBundle, tau: float, solve_mu: bool = True) -> OptState:
    """One Adam update of the vertices and the free attenuations (clamped at 0)."""
    gv = grads.d_vertices
    gm = np.where(state.mu_free, grads.d_mu, 0.0) if solve_mu else np.zeros(len(state.materials))
    if not (np.all(np.isfinite(gv)) and np.all(np.isfinite(gm))):
        raise FloatingPointError(f"non-finite gradient at iteration {state.iteration}")
    t = state.adam_t + 1
    bc1 = 1.0 - BETA1 ** t
    bc2 = 1.0 - BETA2 ** t

    m_v = BETA1 * state.m_vertices + (1 - BETA1) * gv
    v_v = BETA2 * state.v_vertices + (1 - BETA2) * gv * gv
    V = state.mesh.vertices - tau * (m_v / bc1) / (np.sqrt(v_v / bc2) + ADAM_EPS)

    m_m = BETA1 * state.m_mu + (1 - BETA1) * gm
    v_m = BETA2 * state.v_mu + (1 - BETA2) * gm * gm
    mu = state.materials.mu
    if solve_mu and state.mu_free.any():
        step = tau * (m_m / bc1) / (np.sqrt(v_m / bc2) + ADAM_EPS)
        mu = np.where(state.mu_free, np.maximum(mu - step, 0.0), mu)
    return replace(state, mesh=state.mesh.with_vertices(V), materials=MaterialTable(mu),
                   m_vertices=m_v, v_vertices=v_v, m_mu=m_m, v_mu=v_m, adam_t=t)


@dataclass
class Reconstruction:
    mesh: Mesh
    materials: MaterialTable
    history: list
    diagnostics: dict

    def __iter__(self):
        return iter((self.mesh, self.materials, self.history))


def initial_materials(mesh: Mesh, config: OptConfig, materials: MaterialTable | None = None):
    """Material table and free mask; unknown attenuations start at 0.5."""
    n = int(mesh.face_materials.max(initial=0)) + 1
    if materials is None:
        mu = np.full(n, 0.5)
        mu[AIR] = 0.0
    else:
        mu = np.array(materials.mu, dtype=float)
    for k, val in config.mu_init.items():
        mu[int(k)] = float(val)
    free = np.zeros(len(mu), dtype=bool)
    if config.solve_mu:
        free[1:] = True
    return MaterialTable(mu), free


def reconstruct(data: ProjectionStack, init_mesh: Mesh, config: OptConfig,
                materials: MaterialTable | None = None, mu_free=None, threads=None,
                callback=None) -> Reconstruction:
    """Deform ``init_mesh`` (and fit free attenuations) to match ``data``.

    ``callback(state, value)`` is called after every objective evaluation.
    """
    if not check_watertight(init_mesh).ok:
        raise ValueError("initial mesh is not watertight")
    mats, free = initial_materials(init_mesh, config, materials)
    if mu_free is not None:
        free = np.asarray(mu_free, dtype=bool)
    state = OptState.start(init_mesh, mats, free)
    diagnostics: dict = {"warnings": []}
    topo = None
    best = (np.inf, state.mesh, state.materials)

    for it in range(config.iterations):
        state.iteration = it
        changed = False
        if it in config.refine_at:
            refined = refine(state.mesh)
            changed |= refined is not state.mesh
            state = replace(state, mesh=refined)
        if it in config.repair_at:
            repaired = cleanup(state.mesh)
            changed |= repaired is not state.mesh
            state = replace(state, mesh=repaired)
        if changed:
            if not check_watertight(state.mesh).ok:
                diagnostics["aborted"] = f"mesh not watertight at iteration {it}"
                log.error(diagnostics["aborted"])
                return Reconstruction(best[1], best[2], state.history, diagnostics)
            state = state.reset_moments()
            log.info("iteration %d: remeshed to %d faces", it, state.mesh.n_faces)

        value = objective(state.mesh, state.materials, data, config.reg, threads, topo)
        topo = _Topology.of(state.mesh, topo)
        state.history.append(HistoryRow(it, value.e_data, value.e_lap, value.e_edge, value.e_flat,
                                        value.total, value.artifact_pixels))
        if value.total < best[0]:
            best = (value.total, state.mesh, state.materials)
        if value.projection.stack.diagnostics.get("broken_mesh"):
            diagnostics["warnings"].append(f"iteration {it}: many artifact pixels")
        if callback is not None:
            callback(state, value)
        try:
            state = adam_step(state, value.grads, config.step_at(it), config.solve_mu)
        except FloatingPointError as exc:
            diagnostics["aborted"] = str(exc)
            log.error("%s", exc)
            return Reconstruction(best[1], best[2], state.history, diagnostics)

    totals = np.array([h.e_total for h in state.history])
    tail = totals[-max(1, len(totals) // 10):]
    diagnostics["tail_non_increasing"] = bool(np.all(np.diff(tail) <= 0.05 * np.abs(tail[:-1])))
    diagnostics["faces"] = state.mesh.n_faces
    return Reconstruction(state.mesh, state.materials, state.history, diagnostics)
