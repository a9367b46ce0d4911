"""Adjacency graphs and latent-field structure matrices.

Structure matrices (ICAR over areas, first-order random walk over cohorts)
are scaled to generalized variance one, defined here through the spectrum:
the geometric mean of the nonzero eigenvalues of the scaled matrix is one.
Intrinsic fields are parameterized in the eigenbasis of the nonzero
eigenvalues, which enforces the sum-to-zero constraint sets exactly: RW1 sums
to zero, ICAR sums to zero within each connected component, and the type-IV
interaction has zero row and column sums within each component.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from ..errors import GraphError

EIG_TOL = 1e-9


@dataclass(frozen=True)
class SpatialGraph:
    """Undirected area adjacency with precomputed components and scaling."""

    areas: tuple[str, ...]
    edges: tuple[tuple[str, str], ...]
    scaling_factor: float
    components: tuple[tuple[int, ...], ...]

    @property
    def n(self) -> int:
        return len(self.areas)

    @property
    def islands(self) -> tuple[int, ...]:
        return tuple(c[0] for c in self.components if len(c) == 1)

    def index_of(self, area_id: str) -> int:
        try:
            return self.areas.index(area_id)
        except ValueError:
            raise GraphError(f"area {area_id!r} not in graph")

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        idx = {area: i for i, area in enumerate(self.areas)}
        for u, v in self.edges:
            a[idx[u], idx[v]] = 1.0
            a[idx[v], idx[u]] = 1.0
        return a

    @classmethod
    def from_edges(
        cls, areas: Sequence[str], edges: Sequence[tuple[str, str]]
    ) -> "SpatialGraph":
        areas = tuple(str(a) for a in areas)
        if not areas:
            raise GraphError("empty graph: no areas")
        known = set(areas)
        seen = set()
        clean = []
        for u, v in edges:
            u, v = str(u), str(v)
            if u == v:
                raise GraphError(f"self-loop at area {u!r}")
            if u not in known or v not in known:
                raise GraphError(f"edge ({u!r}, {v!r}) references unknown area")
            key = (min(u, v), max(u, v))
            if key in seen:
                raise GraphError(f"duplicate edge ({u!r}, {v!r})")
            seen.add(key)
            clean.append(key)

        graph = cls(
            areas=areas, edges=tuple(clean), scaling_factor=1.0, components=()
        )
        adj = graph.adjacency()
        n_comp, labels = connected_components(csr_matrix(adj), directed=False)
        comps = tuple(
            tuple(np.nonzero(labels == c)[0].tolist()) for c in range(n_comp)
        )
        structure = np.diag(adj.sum(axis=1)) - adj
        evals = np.linalg.eigvalsh(structure)
        nonzero = evals[evals > EIG_TOL * max(evals.max(), 1.0)]
        scaling = float(np.exp(np.mean(np.log(nonzero)))) if len(nonzero) else 1.0
        return cls(
            areas=areas, edges=tuple(clean), scaling_factor=scaling, components=comps
        )


def load_graph(path: str | Path) -> SpatialGraph:
    """Read an adjacency edge list CSV with columns area_a, area_b."""
    frame = pd.read_csv(path, dtype=str)
    for col in ("area_a", "area_b"):
        if col not in frame.columns:
            raise GraphError(f"adjacency CSV missing column {col!r}")
    edges = [(row.area_a, row.area_b) for row in frame.itertuples(index=False)]
    areas = sorted({a for e in edges for a in e})
    return SpatialGraph.from_edges(areas, edges)


def icar_structure(graph: SpatialGraph, scaled: bool = True) -> np.ndarray:
    """ICAR structure matrix (graph Laplacian), optionally variance-scaled."""
    adj = graph.adjacency()
    structure = np.diag(adj.sum(axis=1)) - adj
    return structure / graph.scaling_factor if scaled else structure


def rw1_structure(m: int, scaled: bool = True) -> np.ndarray:
    """First-order random-walk structure matrix over m ordered points."""
    if m < 2:
        raise GraphError(f"RW1 needs at least 2 points, got {m}")
    structure = np.zeros((m, m))
    for i in range(m - 1):
        structure[i, i] += 1.0
        structure[i + 1, i + 1] += 1.0
        structure[i, i + 1] -= 1.0
        structure[i + 1, i] -= 1.0
    if not scaled:
        return structure
    evals = np.linalg.eigvalsh(structure)
    nonzero = evals[evals > EIG_TOL * evals.max()]
    return structure / float(np.exp(np.mean(np.log(nonzero))))


def _intrinsic_basis(structure: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvectors/values of the nonzero spectrum; columns V @ diag(l^-1/2)
    map iid N(0,1) coordinates onto the constrained intrinsic field."""
    evals, evecs = np.linalg.eigh(structure)
    keep = evals > EIG_TOL * max(evals.max(), 1.0)
    return evecs[:, keep], evals[keep]


@dataclass(frozen=True)
class LatentStructure:
    """Precision blueprint for the spatiotemporal latent field.

    Basis matrices map standard-normal coordinates to constrained effects at
    unit scale; multiplying by the block's standard deviation gives the
    effect. ``bym2_marginal_eigs`` are the eigenvalues of the BYM2 spatial
    covariance contribution used by the mixing-parameter prior.
    """

    graph: SpatialGraph
    cohorts: tuple[int, ...]
    k_max: int
    rw1_scaled: np.ndarray
    icar_scaled: np.ndarray
    temporal_basis: np.ndarray
    spatial_basis: np.ndarray
    interaction_basis: np.ndarray
    islands: tuple[int, ...]
    bym2_marginal_eigs: np.ndarray

    @property
    def n_areas(self) -> int:
        return self.graph.n

    @property
    def n_cohorts(self) -> int:
        return len(self.cohorts)

    def type_iv_precision(self) -> np.ndarray:
        """Kronecker(RW1 structure, ICAR structure); index = cohort*n + area."""
        return np.kron(self.rw1_scaled, self.icar_scaled)

    def interaction_rank(self) -> int:
        return self.interaction_basis.shape[1]


def build_latent_structure(
    graph: SpatialGraph, cohorts: Sequence[int], k_max: int
) -> LatentStructure:
    """Assemble scaled structures, constraint-respecting bases, and island rules.

    Islands (areas with no neighbours) receive a pure IID effect at the total
    spatial scale; their interaction coordinates are fully constrained to
    zero, consistent with per-component row/column sum-to-zero constraints on
    a singleton component.
    """
    if graph.n == 0:
        raise GraphError("empty graph")
    cohorts = tuple(sorted(int(b) for b in cohorts))
    if len(cohorts) < 2:
        raise GraphError("latent structure needs at least 2 cohorts for the RW1")

    r_t = rw1_structure(len(cohorts))
    r_s = icar_structure(graph)
    v_t, l_t = _intrinsic_basis(r_t)
    temporal_basis = v_t / np.sqrt(l_t)

    if graph.edges:
        v_s, l_s = _intrinsic_basis(r_s)
        spatial_basis = v_s / np.sqrt(l_s)
    else:
        v_s = np.zeros((graph.n, 0))
        l_s = np.zeros(0)
        spatial_basis = v_s

    # type-IV interaction: eigenpairs of the Kronecker product are products
    # of the factor eigenpairs, so the nonzero-spectrum basis is the
    # Kronecker product of the factor bases
    n, b = graph.n, len(cohorts)
    cols = []
    for jt in range(v_t.shape[1]):
        for js in range(v_s.shape[1]):
            cols.append(
                np.kron(v_t[:, jt], v_s[:, js]) / np.sqrt(l_t[jt] * l_s[js])
            )
    interaction_basis = (
        np.stack(cols, axis=1) if cols else np.zeros((n * b, 0))
    )

    # eigenvalues of (1-lam)*I + lam * pinv(icar_scaled) over non-island dims
    n_regular = graph.n - len(graph.islands)
    gamma = np.concatenate([1.0 / l_s, np.zeros(n_regular - len(l_s))])

    return LatentStructure(
        graph=graph,
        cohorts=cohorts,
        k_max=int(k_max),
        rw1_scaled=r_t,
        icar_scaled=r_s,
        temporal_basis=temporal_basis,
        spatial_basis=spatial_basis,
        interaction_basis=interaction_basis,
        islands=graph.islands,
        bym2_marginal_eigs=gamma,
    )
