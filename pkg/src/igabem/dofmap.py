"""Global numbering of tensor B-spline bases on multi-patch surfaces.

The discontinuous space numbers every patch-local function separately
(patch-major, row-major with the second index fastest).  The continuous
space glues the boundary rows of neighbouring patches through the
conformity table; gluing is an equivalence-class partition computed by
union-find, and classes are numbered by their first occurrence in the
patch-major scan.
"""

from __future__ import annotations

import numpy as np

from .geometry import SurfaceGeometry
from .splines import open_knot_vector


class DofMap:
    """Basis bookkeeping for S^2 (discontinuous) or S^0 (continuous).

    Attributes:
        local_to_global: (n_patches, k*k) int array mapping patch-local
            function ids (j1*k + j2) to global indices.
        dimension: number of global degrees of freedom.
    """

    def __init__(self, geometry: SurfaceGeometry, p: int, m: int, continuity: str):
        if continuity not in ("discontinuous", "continuous"):
            raise ValueError("continuity must be 'discontinuous' or 'continuous'")
        if continuity == "continuous" and p < 1:
            raise ValueError("the continuous space needs degree p >= 1")
        if p < 0 or m < 0:
            raise ValueError("p and m must be non-negative")
        self.geometry = geometry
        self.p = p
        self.m = m
        self.continuity = continuity
        self.kv = open_knot_vector(p, m)
        self.k = self.kv.num_basis
        n = len(geometry)
        k = self.k
        if continuity == "discontinuous":
            self.local_to_global = np.arange(n * k * k, dtype=np.int64).reshape(n, k * k)
            self.dimension = n * k * k
        else:
            self.local_to_global, self.dimension = self._glue(geometry, k)
        self.n_cells = 4 ** m

    def __repr__(self) -> str:
        return f"DofMap({self.continuity}, p={self.p}, m={self.m}, dim={self.dimension})"

    def _edge_locals(self, edge: int) -> np.ndarray:
        """Patch-local ids of the k functions whose trace lives on an edge."""
        k = self.k
        t = np.arange(k)
        if edge == 0:
            return t * k            # j2 = 0
        if edge == 1:
            return (k - 1) * k + t  # j1 = k-1
        if edge == 2:
            return t * k + (k - 1)  # j2 = k-1
        return t                    # j1 = 0

    def _glue(self, geometry: SurfaceGeometry, k: int):
        n = len(geometry)
        parent = np.arange(n * k * k, dtype=np.int64)

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        def union(a, b):
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)

        for iface in geometry.interfaces:
            la = self._edge_locals(iface.edge_a) + iface.patch_a * k * k
            lb = self._edge_locals(iface.edge_b) + iface.patch_b * k * k
            if iface.reversed:
                lb = lb[::-1]
            for a, b in zip(la, lb):
                union(a, b)
        roots = np.array([find(i) for i in range(n * k * k)])
        uniq, inv = np.unique(roots, return_inverse=True)
        # np.unique sorts roots ascending = first-occurrence order because
        # union always keeps the smaller index as the root.
        return inv.reshape(n, k * k).astype(np.int64), uniq.size

    # -- per-element and support bookkeeping ----------------------------------

    def cell_functions(self, cu: int, cv: int) -> np.ndarray:
        """Patch-local ids of the (p+1)^2 functions supported on a cell."""
        p, k = self.p, self.k
        j1 = np.arange(cu, cu + p + 1)
        j2 = np.arange(cv, cv + p + 1)
        return (j1[:, None] * k + j2[None, :]).ravel()

    def function_support_cells(self, local_id: int):
        """Inclusive cell index ranges (u and v) of a local function."""
        p = self.p
        ncell = 2 ** self.m
        j1, j2 = divmod(local_id, self.k)
        return (
            (max(0, j1 - p), min(ncell - 1, j1)),
            (max(0, j2 - p), min(ncell - 1, j2)),
        )

    def anchors(self) -> np.ndarray:
        """Greville anchor (u, v) per patch-local function, shape (k*k, 2)."""
        g = self.kv.greville()
        uu, vv = np.meshgrid(g, g, indexing="ij")
        return np.column_stack([uu.ravel(), vv.ravel()])


def build_dof_map(geometry: SurfaceGeometry, p: int, m: int, continuity: str) -> DofMap:
    """Construct the global numbering for the requested space."""
    return DofMap(geometry, p, m, continuity)
