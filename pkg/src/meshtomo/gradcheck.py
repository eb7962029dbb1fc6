"""Finite-difference checks of the projector adjoint and the regularizer gradients."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import projector
from .geometry import MaterialTable, Mesh, ScanGeometry, make_icosphere
from .shape_opt import energies

log = logging.getLogger(__name__)

VERTEX_TOL = 1e-3
MU_TOL = 1e-9
REG_TOL = 1e-5


@dataclass
class GradcheckReport:
    vertex: float = 0.0
    mu: float = 0.0
    regularizers: dict = field(default_factory=dict)
    n_vertex_trials: int = 0

    @property
    def passed(self) -> bool:
        return (self.n_vertex_trials > 0 and self.vertex < VERTEX_TOL and self.mu < MU_TOL
                and all(v < REG_TOL for v in self.regularizers.values()))

    def lines(self) -> list[str]:
        out = [f"vertex_max_rel_err {self.vertex:.9g} (trials {self.n_vertex_trials}, tol {VERTEX_TOL:g})",
               f"mu_max_rel_err {self.mu:.9g} (tol {MU_TOL:g})"]
        out += [f"{k}_max_rel_err {v:.9g} (tol {REG_TOL:g})" for k, v in self.regularizers.items()]
        out.append("PASS" if self.passed else "FAIL")
        return out


def _coverage(proj: projector.Projection) -> list[np.ndarray]:
    return [np.sort(f.pixel * (len(f.face_sign) + 1) + f.face) for f in proj.fragments]


def _same_coverage(a, b) -> bool:
    return all(x.shape == y.shape and np.array_equal(x, y) for x, y in zip(a, b))


def vertex_directional_errors(mesh: Mesh, materials: MaterialTable, geometry: ScanGeometry,
                              rng: np.random.Generator, n_dirs: int = 5, rel_h: float = 1e-5,
                              max_tries: int = 200, threads=None) -> list[float]:
    """Relative errors of ``<grad, u>`` against central differences.

    The scalar is ``E = <d_p, p>`` for a random ``d_p``. Each direction
    moves one vertex (one with a nonzero adjoint) and is kept only if the
    fragment sets at ``V +- h u`` equal the unperturbed ones.
    """
    base = projector.project(mesh, materials, geometry, threads)
    valid = base.stack.valid
    d_p = np.where(valid, rng.standard_normal(geometry.shape), 0.0)
    grad = projector.backward(mesh, materials, geometry, d_p, base, threads).d_vertices
    cov0 = _coverage(base)
    mag = np.linalg.norm(grad, axis=1)
    active = np.nonzero(mag > 1e-6 * mag.max())[0] if mag.max() > 0 else np.zeros(0, dtype=int)
    if len(active) == 0:
        return []
    h = rel_h * mesh.bbox_diagonal()

    def energy(V):
        proj = projector.project(mesh.with_vertices(V), materials, geometry, threads)
        return float(np.sum(d_p * np.where(valid, proj.stack.data, 0.0))), proj

    errs = []
    for _ in range(max_tries):
        if len(errs) == n_dirs:
            break
        k = rng.choice(active)
        u = np.zeros_like(mesh.vertices)
        u[k] = rng.standard_normal(3)
        u[k] /= np.linalg.norm(u[k])
        ep, pp = energy(mesh.vertices + h * u)
        em, pm = energy(mesh.vertices - h * u)
        if not (_same_coverage(cov0, _coverage(pp)) and _same_coverage(cov0, _coverage(pm))):
            continue
        fd = (ep - em) / (2 * h)
        an = float(np.sum(grad * u))
        errs.append(abs(fd - an) / (abs(an) + 1e-12))
    return errs


def mu_error(mesh: Mesh, materials: MaterialTable, geometry: ScanGeometry,
             rng: np.random.Generator, threads=None) -> float:
    """Max relative error of ``d_mu`` against ``<d_p, p(e_m)>`` (p is linear in mu)."""
    base = projector.project(mesh, materials, geometry, threads)
    d_p = np.where(base.stack.valid, rng.standard_normal(geometry.shape), 0.0)
    d_mu = projector.backward(mesh, materials, geometry, d_p, base, threads).d_mu
    worst = 0.0
    for m in range(1, len(materials)):
        e = np.zeros(len(materials))
        e[m] = 1.0
        exact = float(np.sum(d_p * projector.forward(mesh, MaterialTable(e), geometry, threads).data))
        worst = max(worst, abs(d_mu[m] - exact) / max(abs(exact), 1e-300))
    return worst


def regularizer_errors(mesh: Mesh, rng: np.random.Generator, n_dirs: int = 5,
                       rel_h: float = 1e-6) -> dict:
    """Max relative error of each regularizer gradient along random directions."""
    h = rel_h * mesh.bbox_diagonal()
    out = {}
    fns = {
        "laplacian": lambda m: energies.laplacian_energy(m)[:2],
        "edge": lambda m: energies.edge_energy(m)[:2],
        "flatten": lambda m: energies.flatten_energy(m)[:2],
    }
    for name, fn in fns.items():
        _, g = fn(mesh)
        worst = 0.0
        for _ in range(n_dirs):
            u = rng.standard_normal(mesh.vertices.shape)
            fp = fn(mesh.with_vertices(mesh.vertices + h * u))[0]
            fm = fn(mesh.with_vertices(mesh.vertices - h * u))[0]
            fd = (fp - fm) / (2 * h)
            an = float(np.sum(g * u))
            worst = max(worst, abs(fd - an) / (abs(an) + 1e-12))
        out[name] = worst
    return out


def random_test_mesh(subdivisions: int, rng: np.random.Generator, jitter: float = 0.1) -> Mesh:
    """Icosphere with random vertex displacements (20 or 80 faces for 0/1 subdivisions)."""
    m = make_icosphere(subdivisions, 1.0)
    return m.with_vertices(m.vertices + jitter * rng.standard_normal(m.vertices.shape))


def run(mesh: Mesh, materials: MaterialTable, geometry: ScanGeometry, seed: int = 0,
        threads=None) -> GradcheckReport:
    """All suites: projector vertex adjoint, mu exactness and regularizers.

    Regularizers are checked on a randomly displaced copy of ``mesh`` (a
    symmetric mesh can sit at a stationary point where relative errors are
    meaningless) and on two displaced icospheres with 20 and 80 faces.
    """
    rng = np.random.default_rng(seed)
    rep = GradcheckReport()
    errs = vertex_directional_errors(mesh, materials, geometry, rng, threads=threads)
    rep.n_vertex_trials = len(errs)
    rep.vertex = max(errs) if errs else float("inf")
    rep.mu = mu_error(mesh, materials, geometry, rng, threads)
    shaken = mesh.with_vertices(mesh.vertices + 0.05 * mesh.bbox_diagonal()
                                * rng.standard_normal(mesh.vertices.shape))
    tests = (shaken, random_test_mesh(0, rng), random_test_mesh(1, rng))
    regs = [regularizer_errors(m, rng) for m in tests]
    rep.regularizers = {k: max(r[k] for r in regs) for k in regs[0]}
    return rep
