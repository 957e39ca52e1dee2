"""Euclidean sheaves over directed graphs and their Hodge machinery.

A sheaf assigns an inner-product space (a "stalk") to every vertex and edge of
a directed graph, plus linear restriction maps sending the two endpoint stalks
of each edge into the edge stalk.  Disagreement between neighbours is measured
by the coboundary operator

    (delta x)_e = H_e x_{head(e)} - T_e x_{tail(e)},

represented by a block matrix ``B`` acting on flat vectors whose blocks follow
the vertex (resp. edge) input order.  The cochain spaces carry block-diagonal
Gram matrices ``M1`` and ``M2``, so the adjoint is ``delta* = M1^{-1} B^T M2``.

Everything downstream -- global sections (ker delta), the harmonic space
(ker delta*), Hodge projections, and pseudoinverse solves -- is read off a
single SVD of the whitened matrix ``L2^T B L1^{-T}`` with ``M1 = L1 L1^T`` and
``M2 = L2 L2^T``.  All objects are immutable after construction and safe to
share across threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import StructuralError

RANK_TOL = 1e-10
"""Relative singular-value cutoff below which a direction counts as null."""

_SPD_TOL = 1e-12


@dataclass(frozen=True)
class DirectedGraph:
    """A finite directed graph with a fixed edge order.

    The edge order defines the block layout of edge-indexed vectors, so it is
    part of the data, not an implementation detail.  Self-loops are allowed.
    """

    vertex_count: int
    edges: tuple[tuple[int, int], ...]  # (tail, head) pairs

    def __post_init__(self):
        object.__setattr__(
            self, "edges", tuple((int(t), int(h)) for t, h in self.edges)
        )
        if self.vertex_count < 0:
            raise StructuralError("vertex_count must be nonnegative")
        for t, h in self.edges:
            if not (0 <= t < self.vertex_count and 0 <= h < self.vertex_count):
                raise StructuralError(f"edge ({t}, {h}) references a missing vertex")

    @property
    def edge_count(self) -> int:
        return len(self.edges)


def _check_spd(mat: np.ndarray, what: str) -> np.ndarray:
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise StructuralError(f"{what} must be a square matrix, got {mat.shape}")
    if not np.allclose(mat, mat.T, rtol=1e-10, atol=1e-12):
        raise StructuralError(f"{what} is not symmetric")
    eigs = np.linalg.eigvalsh(mat)
    if eigs[0] <= _SPD_TOL * max(1.0, abs(eigs[-1])):
        raise StructuralError(f"{what} is not positive definite (min eig {eigs[0]:g})")
    return mat


def _spd_factor(mat: np.ndarray, what: str) -> np.ndarray:
    """Return L with mat = L L^T.  Cholesky, eigenfactorization if it fails."""
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        eigs, vecs = np.linalg.eigh(mat)
        if eigs[0] <= _SPD_TOL * max(1.0, abs(eigs[-1])):
            raise StructuralError(f"{what} is not positive definite") from None
        return vecs * np.sqrt(eigs)


class Sheaf:
    """Stalks, restriction maps, and Gram weights over a directed graph.

    Vertex stalk ``v`` is R^{vertex_stalk_dims[v]} with the inner product
    x^T R_v x'; likewise for edges.  ``head_maps[e]`` has shape
    (edge dim, head-vertex dim) and ``tail_maps[e]`` shape
    (edge dim, tail-vertex dim).  Grams default to identities.
    """

    def __init__(
        self,
        graph: DirectedGraph,
        vertex_stalk_dims: Sequence[int],
        edge_stalk_dims: Sequence[int],
        head_maps: Sequence[np.ndarray],
        tail_maps: Sequence[np.ndarray],
        vertex_grams: Sequence[np.ndarray] | None = None,
        edge_grams: Sequence[np.ndarray] | None = None,
    ):
        self.graph = graph
        self.vertex_stalk_dims = tuple(int(d) for d in vertex_stalk_dims)
        self.edge_stalk_dims = tuple(int(d) for d in edge_stalk_dims)
        if len(self.vertex_stalk_dims) != graph.vertex_count:
            raise StructuralError("one stalk dimension required per vertex")
        if len(self.edge_stalk_dims) != graph.edge_count:
            raise StructuralError("one stalk dimension required per edge")
        if any(d <= 0 for d in self.vertex_stalk_dims + self.edge_stalk_dims):
            raise StructuralError("stalk dimensions must be positive")

        if len(head_maps) != graph.edge_count or len(tail_maps) != graph.edge_count:
            raise StructuralError("one head map and one tail map required per edge")
        self.head_maps = tuple(np.asarray(m, dtype=float) for m in head_maps)
        self.tail_maps = tuple(np.asarray(m, dtype=float) for m in tail_maps)
        for e, (tail, head) in enumerate(graph.edges):
            de = self.edge_stalk_dims[e]
            want_h = (de, self.vertex_stalk_dims[head])
            want_t = (de, self.vertex_stalk_dims[tail])
            if self.head_maps[e].shape != want_h:
                raise StructuralError(
                    f"head map of edge {e} has shape {self.head_maps[e].shape}, "
                    f"expected {want_h}"
                )
            if self.tail_maps[e].shape != want_t:
                raise StructuralError(
                    f"tail map of edge {e} has shape {self.tail_maps[e].shape}, "
                    f"expected {want_t}"
                )

        if vertex_grams is None:
            self.vertex_grams = tuple(np.eye(d) for d in self.vertex_stalk_dims)
        else:
            if len(vertex_grams) != graph.vertex_count:
                raise StructuralError("one Gram matrix required per vertex")
            self.vertex_grams = tuple(
                _check_spd(g, f"vertex Gram {v}") for v, g in enumerate(vertex_grams)
            )
        if edge_grams is None:
            self.edge_grams = tuple(np.eye(d) for d in self.edge_stalk_dims)
        else:
            if len(edge_grams) != graph.edge_count:
                raise StructuralError("one Gram matrix required per edge")
            self.edge_grams = tuple(
                _check_spd(g, f"edge Gram {e}") for e, g in enumerate(edge_grams)
            )
        for v, g in enumerate(self.vertex_grams):
            if g.shape[0] != self.vertex_stalk_dims[v]:
                raise StructuralError(f"vertex Gram {v} does not match its stalk")
        for e, g in enumerate(self.edge_grams):
            if g.shape[0] != self.edge_stalk_dims[e]:
                raise StructuralError(f"edge Gram {e} does not match its stalk")

        v_offsets = np.concatenate([[0], np.cumsum(self.vertex_stalk_dims)])
        e_offsets = np.concatenate([[0], np.cumsum(self.edge_stalk_dims)])
        self.d0 = int(v_offsets[-1])
        self.d1 = int(e_offsets[-1])
        self.vertex_slices = tuple(
            slice(int(a), int(b)) for a, b in zip(v_offsets[:-1], v_offsets[1:])
        )
        self.edge_slices = tuple(
            slice(int(a), int(b)) for a, b in zip(e_offsets[:-1], e_offsets[1:])
        )


class CoboundaryOperator:
    """Coboundary matrix plus the Gram data needed for adjoints.

    Attributes:
        sheaf: the defining sheaf.
        B: d1 x d0 coboundary matrix.
        M1, M2: block-diagonal Gram matrices of the 0- and 1-cochain spaces.
        delta_star_matrix: M1^{-1} B^T M2, the matrix of the adjoint.
    """

    def __init__(self, sheaf: Sheaf, B: np.ndarray, M1: np.ndarray, M2: np.ndarray):
        self.sheaf = sheaf
        self.B = B
        self.M1 = M1
        self.M2 = M2
        self._L1 = _spd_factor(M1, "M1")
        self._L2 = _spd_factor(M2, "M2")
        # delta* = M1^{-1} B^T M2
        self.delta_star_matrix = np.linalg.solve(M1, B.T @ M2)
        # Whitened coboundary L2^T B L1^{-T}; its SVD drives every rank query.
        if self.d1 and self.d0:
            b_white = self._L2.T @ np.linalg.solve(self._L1, B.T).T
        else:
            b_white = np.zeros((self.d1, self.d0))
        self._U, self._s, self._Vt = np.linalg.svd(b_white, full_matrices=True)

    @property
    def d0(self) -> int:
        return self.B.shape[1]

    @property
    def d1(self) -> int:
        return self.B.shape[0]

    def rank(self, tol: float = RANK_TOL) -> int:
        if self._s.size == 0 or self._s[0] == 0.0:
            return 0
        return int(np.count_nonzero(self._s > tol * self._s[0]))

    def singular_values(self) -> np.ndarray:
        return self._s.copy()


@dataclass(frozen=True)
class HarmonicSpace:
    """M2-orthonormal basis of ker delta*, isomorphic to the first cohomology."""

    basis: np.ndarray  # d1 x dim_h1
    dim_h1: int


@dataclass(frozen=True)
class SectionSpace:
    """M1-orthonormal basis of ker delta, the space of global sections."""

    basis: np.ndarray  # d0 x dim_h0
    dim_h0: int


def build_coboundary(sheaf: Sheaf) -> CoboundaryOperator:
    """Assemble B, M1, M2 from the sheaf data.

    Block row e carries +head_map in the column block of head(e) and
    -tail_map in the column block of tail(e); for self-loops both accumulate
    into the same block.
    """
    B = np.zeros((sheaf.d1, sheaf.d0))
    for e, (tail, head) in enumerate(sheaf.graph.edges):
        rows = sheaf.edge_slices[e]
        B[rows, sheaf.vertex_slices[head]] += sheaf.head_maps[e]
        B[rows, sheaf.vertex_slices[tail]] -= sheaf.tail_maps[e]
    M1 = np.zeros((sheaf.d0, sheaf.d0))
    for v, g in enumerate(sheaf.vertex_grams):
        M1[sheaf.vertex_slices[v], sheaf.vertex_slices[v]] = g
    M2 = np.zeros((sheaf.d1, sheaf.d1))
    for e, g in enumerate(sheaf.edge_grams):
        M2[sheaf.edge_slices[e], sheaf.edge_slices[e]] = g
    return CoboundaryOperator(sheaf, B, M1, M2)


def _check_len(x: np.ndarray, n: int, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != n:
        raise StructuralError(f"{what} has block length {x.shape[-1]}, expected {n}")
    return x


def apply_delta(op: CoboundaryOperator, x: np.ndarray) -> np.ndarray:
    """Apply the coboundary to a 0-cochain (batched over leading axes)."""
    x = _check_len(x, op.d0, "0-cochain")
    return x @ op.B.T


def apply_delta_star(op: CoboundaryOperator, y: np.ndarray) -> np.ndarray:
    """Apply the adjoint coboundary to a 1-cochain (batched over leading axes)."""
    y = _check_len(y, op.d1, "1-cochain")
    return y @ op.delta_star_matrix.T


def c0_inner(op: CoboundaryOperator, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """M1-weighted inner product on 0-cochains."""
    return np.einsum("...i,ij,...j->...", a, op.M1, b)


def c1_inner(op: CoboundaryOperator, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """M2-weighted inner product on 1-cochains."""
    return np.einsum("...i,ij,...j->...", a, op.M2, b)


def harmonic_basis(op: CoboundaryOperator, tol: float = RANK_TOL) -> HarmonicSpace:
    """M2-orthonormal basis of ker delta*.

    Whitened left singular vectors with singular value <= tol * sigma_max are
    mapped back through L2^{-T}; the count equals d1 - rank(B).
    """
    rank = op.rank(tol)
    null_white = op._U[:, rank:]
    if op.d1:
        basis = np.linalg.solve(op._L2.T, null_white)
    else:
        basis = np.zeros((0, 0))
    return HarmonicSpace(basis=basis, dim_h1=op.d1 - rank)


def global_section_basis(op: CoboundaryOperator, tol: float = RANK_TOL) -> SectionSpace:
    """M1-orthonormal basis of ker delta (the global sections)."""
    rank = op.rank(tol)
    null_white = op._Vt[rank:, :].T
    if op.d0:
        basis = np.linalg.solve(op._L1.T, null_white)
    else:
        basis = np.zeros((0, 0))
    return SectionSpace(basis=basis, dim_h0=op.d0 - rank)


def hodge_project(
    op: CoboundaryOperator, harmonic: HarmonicSpace, y: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Split y into its im-delta and harmonic components.

    Returns (im_delta_part, harmonic_part); the two are M2-orthogonal.
    """
    y = _check_len(y, op.d1, "1-cochain")
    if harmonic.basis.shape[0] != op.d1:
        raise StructuralError("harmonic basis does not match this operator")
    coeff = harmonic.basis.T @ (op.M2 @ y)
    harmonic_part = harmonic.basis @ coeff
    return y - harmonic_part, harmonic_part


def delta_pseudoinverse_apply(op: CoboundaryOperator, b: np.ndarray) -> np.ndarray:
    """Apply the pseudoinverse of delta restricted to (ker delta)^perp.

    Solves the normal equations delta* delta x = delta* b with the minimum-M1-
    norm solution; harmonic b maps to zero.
    """
    b = _check_len(b, op.d1, "1-cochain")
    rank = op.rank()
    if rank == 0:
        return np.zeros(op.d0)
    bw = op._L2.T @ b
    coeff = (op._U[:, :rank].T @ bw) / op._s[:rank]
    xw = op._Vt[:rank, :].T @ coeff
    return np.linalg.solve(op._L1.T, xw)


# ---------------------------------------------------------------------------
# Sheaf description files.
#
# JSON schema (row-major matrices, Grams optional and defaulting to identity):
# {
#   "vertex_count": n,
#   "vertex_stalk_dims": [d_0, ..., d_{n-1}],
#   "vertex_grams": [[[...]], ...],              # optional
#   "edges": [
#     {"tail": i, "head": j, "stalk_dim": d,
#      "head_map": [[...]], "tail_map": [[...]],
#      "gram": [[...]]}                           # gram optional
#   ]
# }
# Numeric fields round-trip bit-identically (shortest-repr JSON floats).
# ---------------------------------------------------------------------------

_SHEAF_KEYS = {"vertex_count", "vertex_stalk_dims", "vertex_grams", "edges"}
_EDGE_KEYS = {"tail", "head", "stalk_dim", "head_map", "tail_map", "gram"}


def sheaf_to_dict(sheaf: Sheaf) -> dict:
    edges = []
    for e, (tail, head) in enumerate(sheaf.graph.edges):
        edges.append(
            {
                "tail": tail,
                "head": head,
                "stalk_dim": sheaf.edge_stalk_dims[e],
                "head_map": sheaf.head_maps[e].tolist(),
                "tail_map": sheaf.tail_maps[e].tolist(),
                "gram": sheaf.edge_grams[e].tolist(),
            }
        )
    return {
        "vertex_count": sheaf.graph.vertex_count,
        "vertex_stalk_dims": list(sheaf.vertex_stalk_dims),
        "vertex_grams": [g.tolist() for g in sheaf.vertex_grams],
        "edges": edges,
    }


def sheaf_from_dict(data: dict) -> Sheaf:
    if not isinstance(data, dict):
        raise StructuralError("sheaf description must be a JSON object")
    unknown = set(data) - _SHEAF_KEYS
    if unknown:
        raise StructuralError(f"unknown sheaf keys: {sorted(unknown)}")
    for key in ("vertex_count", "vertex_stalk_dims", "edges"):
        if key not in data:
            raise StructuralError(f"sheaf description missing '{key}'")
    edges = data["edges"]
    for entry in edges:
        bad = set(entry) - _EDGE_KEYS
        if bad:
            raise StructuralError(f"unknown edge keys: {sorted(bad)}")
        for key in ("tail", "head", "stalk_dim", "head_map", "tail_map"):
            if key not in entry:
                raise StructuralError(f"edge entry missing '{key}'")
    graph = DirectedGraph(
        vertex_count=int(data["vertex_count"]),
        edges=tuple((entry["tail"], entry["head"]) for entry in edges),
    )
    edge_dims = [int(entry["stalk_dim"]) for entry in edges]
    edge_grams = None
    if any("gram" in entry for entry in edges):
        edge_grams = [
            np.asarray(entry["gram"], dtype=float)
            if "gram" in entry
            else np.eye(edge_dims[e])
            for e, entry in enumerate(edges)
        ]
    vertex_grams = data.get("vertex_grams")
    if vertex_grams is not None:
        vertex_grams = [np.asarray(g, dtype=float) for g in vertex_grams]
    return Sheaf(
        graph=graph,
        vertex_stalk_dims=[int(d) for d in data["vertex_stalk_dims"]],
        edge_stalk_dims=edge_dims,
        head_maps=[np.asarray(entry["head_map"], dtype=float) for entry in edges],
        tail_maps=[np.asarray(entry["tail_map"], dtype=float) for entry in edges],
        vertex_grams=vertex_grams,
        edge_grams=edge_grams,
    )


def save_sheaf(sheaf: Sheaf, path: str | Path) -> None:
    Path(path).write_text(json.dumps(sheaf_to_dict(sheaf), indent=1) + "\n")


def load_sheaf(path: str | Path) -> Sheaf:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise StructuralError(f"malformed sheaf file {path}: {exc}") from exc
    return sheaf_from_dict(data)
