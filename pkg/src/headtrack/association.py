"""Appearance/motion cost matrices and gated minimum-cost bipartite matching.

Appearance costs come from detector-branch feature vectors compared by
cosine distance; motion costs are normalized center distances to the
Kalman prediction. The solver works on the admissible (gated) pairs only
and maximizes match cardinality before minimizing total cost.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import HeadKeypoint
from .kalman import KalmanState

FEATURE_KINDS = ("f_cls", "f_reg", "f_head")

_UNIT_NORM_TOL = 1e-6


def _as_unit(v, kind: str) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise ValueError(f"{kind} must be a 1-d vector")
    n = float(np.linalg.norm(v))
    if abs(n - 1.0) > _UNIT_NORM_TOL:
        raise ValueError(f"{kind} must be unit-norm (got |v| = {n})")
    return v


@dataclass(frozen=True)
class AppearanceDescriptor:
    """Unit-norm feature vectors from the detector's output branches.

    Any subset of the three kinds may be present; comparisons only use
    kinds present on both sides.
    """

    f_cls: Optional[np.ndarray] = None
    f_reg: Optional[np.ndarray] = None
    f_head: Optional[np.ndarray] = None

    def __post_init__(self):
        for kind in FEATURE_KINDS:
            v = getattr(self, kind)
            if v is not None:
                object.__setattr__(self, kind, _as_unit(v, kind))
        if all(getattr(self, k) is None for k in FEATURE_KINDS):
            raise ValueError("descriptor needs at least one feature kind")

    def kinds(self) -> tuple[str, ...]:
        return tuple(k for k in FEATURE_KINDS if getattr(self, k) is not None)


@dataclass(frozen=True)
class AssociationConfig:
    """Weights and gate for cost-matrix construction.

    ``feature_weights`` follows the FEATURE_KINDS order (cls, reg, head)
    and is renormalized over whichever kinds a pair actually shares.
    ``motion_scale`` should be set to the image diagonal so appearance and
    motion terms are commensurate across resolutions.
    """

    w_app: float = 0.5
    w_mot: float = 0.5
    feature_weights: tuple[float, float, float] = (0.5, 0.5, 0.0)
    gate_g: float = 0.5
    motion_scale: float = 1.0

    def __post_init__(self):
        if self.w_app < 0.0 or self.w_mot < 0.0 or self.w_app + self.w_mot <= 0.0:
            raise ValueError("need w_app, w_mot >= 0 with a positive sum")
        if any(w < 0.0 for w in self.feature_weights):
            raise ValueError("feature weights must be non-negative")
        if self.gate_g <= 0.0:
            raise ValueError(f"gate must be positive, got {self.gate_g}")
        if self.motion_scale <= 0.0:
            raise ValueError(f"motion_scale must be positive, got {self.motion_scale}")


@dataclass
class CostMatrix:
    """Dense tracks x detections costs with an admissibility mask."""

    values: np.ndarray  # (T, D) float
    gate_mask: np.ndarray  # (T, D) bool


def cosine_cost(p: np.ndarray, q: np.ndarray) -> float:
    """1 - <p, q> for unit vectors; 0 identical, 1 orthogonal, 2 antipodal."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"dimension mismatch: {p.shape} vs {q.shape}")
    return 1.0 - float(np.dot(p, q))


def appearance_cost(
    track_desc: AppearanceDescriptor,
    det_desc: AppearanceDescriptor,
    cfg: AssociationConfig,
) -> Optional[float]:
    """Weighted cosine cost over the feature kinds present on both sides.

    Weights are renormalized over the shared subset. Returns None when the
    descriptors share no kind (or all shared kinds carry zero weight), in
    which case the caller falls back to pure motion cost.
    """
    total_w = 0.0
    acc = 0.0
    for kind, w in zip(FEATURE_KINDS, cfg.feature_weights):
        a = getattr(track_desc, kind)
        b = getattr(det_desc, kind)
        if a is None or b is None or w == 0.0:
            continue
        acc += w * cosine_cost(a, b)
        total_w += w
    if total_w == 0.0:
        return None
    return acc / total_w


def gaussian_weighted_descriptor(
    cell_centers: np.ndarray,
    cell_features: np.ndarray,
    head: HeadKeypoint,
    sigma: float,
) -> np.ndarray:
    """Reweight a feature-map patch around the head keypoint.

    ``cell_centers`` is (N, 2) in pixel space and ``cell_features`` (N, C).
    Each cell's features are scaled by the Gaussian falloff of its center
    from the head point, then flattened and renormalized to a unit vector
    (the head-weighted replacement for the raw regression feature).
    """
    if sigma <= 0.0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    centers = np.asarray(cell_centers, dtype=float).reshape(-1, 2)
    feats = np.asarray(cell_features, dtype=float)
    if feats.shape[0] != centers.shape[0]:
        raise ValueError("one feature row per cell required")
    d2 = np.sum((centers - [head.x_head, head.y_head]) ** 2, axis=1)
    w = np.exp(-d2 / (2.0 * sigma * sigma))
    flat = (feats * w[:, None]).reshape(-1)
    n = float(np.linalg.norm(flat))
    if n <= 0.0:
        raise ValueError("weighting produced a zero vector (head too far from the patch)")
    return flat / n


def motion_cost(track: KalmanState, det, cfg: AssociationConfig) -> float:
    """Center distance between the predicted state and a detection, normalized."""
    du = track.x[0] - det.bbox.cx
    dv = track.x[1] - det.bbox.cy
    return float(np.hypot(du, dv)) / cfg.motion_scale


def build_cost_matrix(tracks: Sequence, detections: Sequence, cfg: AssociationConfig) -> CostMatrix:
    """Combine appearance and motion costs into a gated matrix.

    ``tracks`` expose ``.kf`` (predicted KalmanState) and ``.descriptor``;
    ``detections`` expose ``.bbox`` and ``.descriptor``. Pairs without a
    shared feature kind use the motion term alone.
    """
    T, D = len(tracks), len(detections)
    values = np.zeros((T, D))
    for i, trk in enumerate(tracks):
        for j, det in enumerate(detections):
            c_mot = motion_cost(trk.kf, det, cfg)
            c_app = None
            if trk.descriptor is not None and det.descriptor is not None:
                c_app = appearance_cost(trk.descriptor, det.descriptor, cfg)
            if c_app is None:
                values[i, j] = cfg.w_mot * c_mot
            else:
                values[i, j] = cfg.w_app * c_app + cfg.w_mot * c_mot
    mask = values <= cfg.gate_g
    return CostMatrix(values=values, gate_mask=mask)


def _lsa_total(m: np.ndarray) -> float:
    rows, cols = linear_sum_assignment(m)
    return float(m[rows, cols].sum())


def solve_assignment(c: CostMatrix) -> list[tuple[int, int]]:
    """Minimum-cost one-to-one matching restricted to admissible pairs.

    Gated-out pairs keep their matrix slot but are encoded as forbidden,
    so index mapping is preserved. Among admissible pairs the solver first
    maximizes the number of matches, then minimizes total cost; ties are
    broken toward the lexicographically smallest (track, detection) list.
    Returned pairs never violate the gate.
    """
    T, D = c.values.shape
    if T == 0 or D == 0:
        return []
    admissible = c.gate_mask & np.isfinite(c.values)
    if not admissible.any():
        return []

    # Square encoding: per-row / per-column dummy slots priced just above
    # any admissible cost make "leave unmatched" explicit, so forbidden
    # pairs never need huge sentinel magnitudes. Shifting admissible costs
    # to non-negative keeps matching always preferable to unmatching
    # without changing which matchings are optimal at a given cardinality.
    values = c.values
    lo = float(values[admissible].min())
    if lo < 0.0:
        values = values - lo
    unmatch = float(values[admissible].max()) + 1.0
    barred = (T + D + 1.0) * (unmatch + 1.0)
    n = T + D
    enc = np.full((n, n), barred)
    enc[:T, :D] = np.where(admissible, values, barred)
    enc[:T, D:] = np.where(np.eye(T, dtype=bool), unmatch, barred)
    enc[T:, :D] = barred
    np.fill_diagonal(enc[T:, :D], unmatch)
    enc[T:, D:] = 0.0

    best = _lsa_total(enc)
    tol = 1e-9 * max(1.0, abs(best))

    pairs: list[tuple[int, int]] = []
    cols = list(range(n))  # original column ids of the current submatrix
    cur = enc
    for i in range(T):
        # current row 0 is always the next original track row
        fixed = False
        for jc, j in enumerate(cols):
            if j >= D:
                break  # dummy columns sort after all real ones
            val = cur[0, jc]
            if val >= barred:
                continue
            sub = np.delete(np.delete(cur, 0, axis=0), jc, axis=1)
            sub_best = _lsa_total(sub)
            if val + sub_best <= best + tol:
                pairs.append((i, j))
                cols.pop(jc)
                cur = sub
                best = sub_best
                fixed = True
                break
        if not fixed:
            # row provably unmatched in every optimum: retire it with its own dummy
            jc = cols.index(D + i)
            cur = np.delete(np.delete(cur, 0, axis=0), jc, axis=1)
            cols.pop(jc)
            best = _lsa_total(cur)
    return pairs
