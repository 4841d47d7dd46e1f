"""Two-level grouping of candidate tokens into diagnostic contexts.

The coarse level walks the candidate sequence once and cuts wherever
consecutive tokens stop being compatible (low affinity or a long time gap),
yielding temporally contiguous groups. The fine level re-clusters each
coarse group with average-linkage agglomeration under the same affinity,
stopping at a stricter threshold, so that repeated glimpses of one finding
collapse together while nearby distinct findings stay separate. Group
counts are emergent, never fixed in advance.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .model import DataError, LesionLabel
from .tokens import SpatioTemporalToken, token_matrix

DEFAULT_SIGMA_COARSE = 0.55
DEFAULT_SIGMA_FINE = 0.75
DEFAULT_GAP_MAX_SEC = 600.0


@dataclass(frozen=True)
class CoarseContext:
    id: int
    members: tuple[int, ...]       # frame indices, sorted ascending
    t_start: float
    t_end: float

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(self.members))
        if list(self.members) != sorted(self.members):
            raise DataError("coarse context members must be sorted")


@dataclass(frozen=True)
class FineContext:
    coarse_id: int
    fine_id: int
    members: tuple[int, ...]       # frame indices, sorted ascending

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(self.members))
        if not self.members:
            raise DataError("fine context may not be empty")
        if list(self.members) != sorted(self.members):
            raise DataError("fine context members must be sorted")

    @property
    def id(self) -> tuple[int, int]:
        return (self.coarse_id, self.fine_id)


@dataclass(frozen=True)
class ContextHierarchy:
    coarse: tuple[CoarseContext, ...]
    fine: tuple[FineContext, ...]
    provenance: dict = field(default_factory=dict)

    def fine_of(self, coarse_id: int) -> list[FineContext]:
        return [f for f in self.fine if f.coarse_id == coarse_id]

    def all_members(self) -> list[int]:
        out: list[int] = []
        for f in self.fine:
            out.extend(f.members)
        return sorted(out)

    def to_json(self) -> str:
        doc = {
            "provenance": self.provenance,
            "coarse": [
                {"id": c.id, "members": list(c.members), "t_start": c.t_start, "t_end": c.t_end}
                for c in self.coarse
            ],
            "fine": [
                {"coarse_id": f.coarse_id, "fine_id": f.fine_id, "members": list(f.members)}
                for f in self.fine
            ],
        }
        return json.dumps(doc, indent=2) + "\n"


def token_affinity(a: SpatioTemporalToken, b: SpatioTemporalToken) -> float:
    """Cosine similarity of two full token vectors; zero vectors score 0."""
    va, vb = a.vector, b.vector
    if va.shape != vb.shape:
        raise DataError(f"token dims differ: {va.shape} vs {vb.shape}")
    na = np.linalg.norm(va)
    nb = np.linalg.norm(vb)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(va, vb) / (na * nb))


def _normalized_rows(mat: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    out = np.zeros_like(mat)
    nz = norms[:, 0] > 0
    out[nz] = mat[nz] / norms[nz]
    return out


def affinity_matrix(tokens: Sequence[SpatioTemporalToken]) -> np.ndarray:
    """Pairwise token affinities; rows with zero norm score 0 everywhere."""
    rows = _normalized_rows(token_matrix(tokens))
    return rows @ rows.T


def weave_coarse(
    tokens: Sequence[SpatioTemporalToken],
    sigma_coarse: float = DEFAULT_SIGMA_COARSE,
    gap_max_sec: float = DEFAULT_GAP_MAX_SEC,
) -> list[CoarseContext]:
    """Greedy temporal segmentation of the candidate token sequence.

    A new coarse context starts whenever the affinity between consecutive
    tokens drops below sigma_coarse or their timestamps are more than
    gap_max_sec apart. Contexts therefore partition the candidates into
    contiguous runs.
    """
    if not tokens:
        return []
    times = [t.timestamp_sec for t in tokens]
    if any(b < a for a, b in zip(times, times[1:])):
        raise DataError("tokens must be in temporal order")

    rows = _normalized_rows(token_matrix(tokens))
    consec_aff = np.sum(rows[:-1] * rows[1:], axis=1)  # affinity(prev, cur)
    gaps = np.diff(np.asarray(times))

    cuts = np.flatnonzero((consec_aff < sigma_coarse) | (gaps > gap_max_sec)) + 1
    bounds = [0, *cuts.tolist(), len(tokens)]

    contexts = []
    for cid, (lo, hi) in enumerate(zip(bounds[:-1], bounds[1:])):
        chunk = tokens[lo:hi]
        contexts.append(CoarseContext(
            id=cid,
            members=tuple(t.frame_index for t in chunk),
            t_start=chunk[0].timestamp_sec,
            t_end=chunk[-1].timestamp_sec,
        ))
    return contexts


def _average_linkage_partition(aff: np.ndarray, sigma: float) -> list[list[int]]:
    """Average-linkage agglomeration over a precomputed affinity matrix.

    Repeatedly merges the cluster pair with the highest average
    inter-cluster affinity while that value stays >= sigma. Exact ties go
    to the pair whose sorted member lists compare lexicographically
    smallest. Returns the final partition as sorted lists of row positions,
    ordered by first member.
    """
    n = aff.shape[0]
    if n == 0:
        return []
    if n == 1:
        return [[0]]

    sim = aff.astype(np.float64).copy()
    np.fill_diagonal(sim, -np.inf)
    active = np.ones(n, dtype=bool)
    sizes = np.ones(n, dtype=np.int64)
    members: list[list[int]] = [[i] for i in range(n)]

    # per-cluster running best partner, maintained across merges
    nn_val = sim.max(axis=1)
    nn_arg = sim.argmax(axis=1).astype(np.int64)

    def recompute(k: int) -> None:
        nn_val[k] = sim[k].max()
        nn_arg[k] = int(sim[k].argmax())

    while int(active.sum()) > 1:
        best = nn_val[active].max()
        if not np.isfinite(best) or best < sigma:
            break

        # enumerate every tied pair; symmetry puts the max on both rows
        pairs = []
        for i in np.flatnonzero(active & (nn_val == best)):
            for j in np.flatnonzero(active & (sim[i] == best)):
                if i < j:
                    pairs.append((int(i), int(j)))
        i, j = min(pairs, key=lambda p: (min(members[p[0]], members[p[1]]),
                                         max(members[p[0]], members[p[1]])))

        # fold cluster j into slot i with the weighted-average update
        ni, nj = sizes[i], sizes[j]
        merged = (ni * sim[i] + nj * sim[j]) / (ni + nj)
        sim[i, :] = merged
        sim[:, i] = merged
        sim[i, i] = -np.inf
        sim[j, :] = -np.inf
        sim[:, j] = -np.inf
        active[j] = False
        sizes[i] = ni + nj
        members[i] = sorted(members[i] + members[j])
        members[j] = []

        recompute(i)
        for k in np.flatnonzero(active):
            if k == i:
                continue
            if nn_arg[k] == i or nn_arg[k] == j:
                recompute(k)
            elif sim[k, i] > nn_val[k]:
                nn_val[k] = sim[k, i]
                nn_arg[k] = i

    parts = [members[k] for k in np.flatnonzero(active)]
    return sorted(parts, key=lambda m: m[0])


def weave_fine(
    coarse: CoarseContext,
    tokens: Sequence[SpatioTemporalToken],
    sigma_fine: float = DEFAULT_SIGMA_FINE,
) -> list[FineContext]:
    """Split one coarse context into finding-level groups.

    Member tokens are canonically ordered by frame index before clustering,
    so the result does not depend on the order tokens were supplied in.
    """
    by_index = {t.frame_index: t for t in tokens}
    missing = [m for m in coarse.members if m not in by_index]
    if missing:
        raise DataError(f"coarse context members without tokens: {missing[:5]}")
    ordered = [by_index[m] for m in coarse.members]   # members are sorted

    aff = affinity_matrix(ordered)
    parts = _average_linkage_partition(aff, sigma_fine)
    return [
        FineContext(
            coarse_id=coarse.id,
            fine_id=fid,
            members=tuple(ordered[p].frame_index for p in part),
        )
        for fid, part in enumerate(parts)
    ]


def build_hierarchy(
    tokens: Sequence[SpatioTemporalToken],
    sigma_coarse: float = DEFAULT_SIGMA_COARSE,
    sigma_fine: float = DEFAULT_SIGMA_FINE,
    gap_max_sec: float = DEFAULT_GAP_MAX_SEC,
) -> ContextHierarchy:
    """Full two-level hierarchy over a candidate token sequence."""
    if sigma_fine < sigma_coarse:
        raise DataError(
            f"sigma_fine ({sigma_fine}) must be >= sigma_coarse ({sigma_coarse})"
        )
    coarse = weave_coarse(tokens, sigma_coarse, gap_max_sec)
    fine: list[FineContext] = []
    for c in coarse:
        fine.extend(weave_fine(c, tokens, sigma_fine))
    return ContextHierarchy(
        coarse=tuple(coarse),
        fine=tuple(fine),
        provenance={
            "sigma_coarse": sigma_coarse,
            "sigma_fine": sigma_fine,
            "gap_max_sec": gap_max_sec,
        },
    )


def dominant_label(
    context: FineContext,
    frame_labels: Mapping[int, int],
    taxonomy: Sequence[LesionLabel],
) -> LesionLabel:
    """Mode of the members' true labels; ties break to the lowest label id.

    Ground truth is only available in simulation and tests; this is a
    measurement aid, never an inference step.
    """
    counts: dict[int, int] = {}
    for m in context.members:
        lid = frame_labels[m]
        counts[lid] = counts.get(lid, 0) + 1
    best_id = min(counts, key=lambda lid: (-counts[lid], lid))
    return taxonomy[best_id]
