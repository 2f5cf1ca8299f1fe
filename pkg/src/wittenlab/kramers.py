"""Eyring-Kramers constants and small-eigenvalue predictions.

Every labeled minimum x gets a prediction

    Lambda_h(x) = (sqrt(h) K1 + h K2) * exp(-2 E / h),

where E = f(j(x)) - f(x) and K1/K2 collect per-saddle constants: boundary
contacts with nonvanishing gradient contribute at order sqrt(h), critical
saddles (interior or boundary) at order h, with the boundary case carrying a
factor-2 enhancement relative to the interior one.  The sharp
principal-eigenvalue shortcut formula is available when the deepest well
touches the boundary only at critical saddles with aligned normals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "KramersError",
    "SaddleContribution",
    "KramersPrediction",
    "CrossTerm",
    "PredictionSet",
    "PrincipalFormulaResult",
    "saddle_constant",
    "build_prediction",
    "principal_eigenvalue_formula",
]

SQRT_PI = math.sqrt(math.pi)


class KramersError(Exception):
    pass


@dataclass(frozen=True)
class SaddleContribution:
    saddle_id: int
    kind: str  # boundary_noncritical | boundary_critical | interior
    constant: float  # c_{x,z} > 0
    h_power: float  # 0.5 for boundary_noncritical, 1.0 otherwise

    def __post_init__(self):
        if self.constant <= 0.0:
            raise KramersError(f"saddle constant must be positive, got {self.constant}")


def _well_b_constant(argmin):
    """Sum of det Hess^(−1/2) over the minima achieving the well minimum."""
    total = 0.0
    for q in argmin:
        det = q.det_hessian()
        if det <= 0.0:
            raise KramersError(
                f"claimed minimum {q.ident} has nonpositive Hessian determinant {det}"
            )
        total += det ** -0.5
    return total


def saddle_constant(label, z, argmin=None):
    """Per-saddle constant c_{x,z} for saddle z of the well labeled ``label``.

    boundary_noncritical: (2 dnf / sqrt(pi)) * det(tangential Hess)^(-1/2) / B
    boundary_critical:    (2 |mu_d| / pi)   * |det Hess|^(-1/2) / B
    interior:             (|mu_d| / pi)     * |det Hess|^(-1/2) / B
    with B the well's argmin Hessian sum; the 1-D tangential determinant is
    the empty product 1.
    """
    if argmin is None:
        argmin = label.argmin
    B = _well_b_constant(argmin)
    kind = z.saddle_kind
    if kind == "boundary_noncritical":
        det_t = z.det_tangential_hessian()
        if det_t <= 0.0:
            raise KramersError(f"contact {z.ident} has nonpositive tangential determinant")
        c = (2.0 * z.normal_derivative / SQRT_PI) * det_t**-0.5 / B
        return SaddleContribution(z.ident, kind, c, 0.5)
    if kind in ("boundary_critical", "interior"):
        mu = z.mu_d
        if mu >= 0.0:
            raise KramersError(f"saddle {z.ident} has nonnegative lowest eigenvalue {mu}")
        det = abs(z.det_hessian())
        factor = 2.0 if kind == "boundary_critical" else 1.0
        c = (factor * abs(mu) / math.pi) * det**-0.5 / B
        return SaddleContribution(z.ident, kind, c, 1.0)
    raise KramersError(f"saddle {z.ident} has no classification")


@dataclass
class KramersPrediction:
    minimum_id: int
    location: np.ndarray
    energy: float
    contributions: list
    K1: float
    K2: float
    p: float  # 0.25 when K1 != 0 else 0.5
    gamma: float  # 2 p
    B: float
    A1: float
    A2: float
    error_order: str  # "O(h)" or "O(sqrt(h))"
    label: object = None

    def __post_init__(self):
        if self.K1 == 0.0 and self.K2 == 0.0:
            raise KramersError("prediction with (K1, K2) == (0, 0)")

    def evaluate(self, h):
        """Lambda_h = (sqrt(h) K1 + h K2) exp(-2E/h)."""
        h = np.asarray(h, dtype=float)
        return (np.sqrt(h) * self.K1 + h * self.K2) * np.exp(-2.0 * self.energy / h)

    def scale(self, h):
        """Pure two-sided scale h^(2p) exp(-2E/h) used for ordering."""
        return float(h) ** (2.0 * self.p) * math.exp(-2.0 * self.energy / float(h))


@dataclass(frozen=True)
class CrossTerm:
    id_x: int
    id_y: int
    K: float
    shared_saddles: tuple


@dataclass
class PredictionSet:
    predictions: list  # sorted: energy decreasing, then p decreasing
    cross_terms: list
    m_star: int  # largest valid sharp-asymptotics prefix (0 if none)
    m_star_reasons: list


def build_prediction(labeling, crits, tol_level=None):
    """Predictions for all labeled minima plus cross terms and the sharp prefix.

    Ordering follows the two-sided-bound convention: energies decreasing,
    and on energy ties the sqrt(h)-order wells (p = 1/4) first.  The sharp
    prefix m* is the largest m such that (1) the energies of the first m
    dominate the rest strictly, (2) their saddle sets are disjoint from all
    others, and (3) nested wells among the first m have strictly increasing
    minimum values.
    """
    if tol_level is None:
        tol_level = labeling.tol_level
    preds = []
    for lab in labeling.labels:
        contributions = [saddle_constant(lab, z) for z in lab.saddles]
        K1 = sum(c.constant for c in contributions if c.h_power == 0.5)
        K2 = sum(c.constant for c in contributions if c.h_power == 1.0)
        B = _well_b_constant(lab.argmin)
        A1 = sum(
            2.0 * z.normal_derivative * z.det_tangential_hessian() ** -0.5
            for z in lab.saddles
            if z.saddle_kind == "boundary_noncritical"
        )
        A2 = (
            sum(
                (2.0 if z.saddle_kind == "boundary_critical" else 1.0)
                * abs(z.mu_d)
                * abs(z.det_hessian()) ** -0.5
                for z in lab.saddles
                if z.saddle_kind in ("boundary_critical", "interior")
            )
            / SQRT_PI
        )
        has_boundary_crit = any(z.saddle_kind == "boundary_critical" for z in lab.saddles)
        preds.append(
            KramersPrediction(
                minimum_id=lab.minimum.ident,
                location=lab.minimum.location,
                energy=lab.energy,
                contributions=contributions,
                K1=K1,
                K2=K2,
                p=0.25 if K1 != 0.0 else 0.5,
                gamma=0.5 if K1 != 0.0 else 1.0,
                B=B,
                A1=A1,
                A2=A2,
                error_order="O(sqrt(h))" if has_boundary_crit else "O(h)",
                label=lab,
            )
        )
    preds.sort(key=lambda p: (-p.energy, -p.p, tuple(p.location)))

    cross = []
    const_of = {p.minimum_id: {c.saddle_id: c.constant for c in p.contributions} for p in preds}
    for i in range(len(preds)):
        for j in range(i + 1, len(preds)):
            a, b = preds[i], preds[j]
            shared = sorted(set(const_of[a.minimum_id]) & set(const_of[b.minimum_id]))
            if shared:
                K = sum(
                    math.sqrt(const_of[a.minimum_id][z] * const_of[b.minimum_id][z])
                    for z in shared
                )
                cross.append(CrossTerm(a.minimum_id, b.minimum_id, K, tuple(shared)))

    m_star, reasons = _sharp_prefix(preds, labeling, tol_level)
    return PredictionSet(predictions=preds, cross_terms=cross, m_star=m_star, m_star_reasons=reasons)


def _sharp_prefix(preds, labeling, tol):
    n = len(preds)
    by_id = {lab.minimum.ident: lab for lab in labeling.labels}
    node_sets = {lab.minimum.ident: set(lab.node_set.tolist()) for lab in labeling.labels}
    saddle_sets = {p.minimum_id: {c.saddle_id for c in p.contributions} for p in preds}
    last_reasons = []
    for m in range(n, 0, -1):
        reasons = []
        tail_max = max((p.energy for p in preds[m:]), default=0.0)
        if not preds[m - 1].energy > tail_max + tol:
            reasons.append(f"m={m}: no strict energy gap after prefix")
        for i in range(m):
            mine = saddle_sets[preds[i].minimum_id]
            others = set()
            for q in preds:
                if q.minimum_id != preds[i].minimum_id:
                    others |= saddle_sets[q.minimum_id]
            if mine & others:
                reasons.append(
                    f"m={m}: well of minimum {preds[i].minimum_id} shares saddles"
                )
                break
        for k in range(m):
            for ell in range(m):
                if k == ell:
                    continue
                a, b = preds[k], preds[ell]
                if node_sets[b.minimum_id] < node_sets[a.minimum_id]:
                    fa = by_id[a.minimum_id].minimum.value
                    fb = by_id[b.minimum_id].minimum.value
                    if not fb > fa + tol:
                        reasons.append(
                            f"m={m}: nested wells {b.minimum_id} in {a.minimum_id} "
                            "without strict minimum gap"
                        )
        if not reasons:
            return m, []
        last_reasons = reasons
    return 0, last_reasons


@dataclass
class PrincipalFormulaResult:
    applicable: bool
    reasons: list
    prefactor: float | None = None  # coefficient of h exp(-2E/h)
    energy: float | None = None
    saddle_ids: tuple = ()

    def evaluate(self, h):
        if not self.applicable:
            raise KramersError("principal-eigenvalue formula not applicable")
        h = np.asarray(h, dtype=float)
        return self.prefactor * h * np.exp(-2.0 * self.energy / h)


def principal_eigenvalue_formula(field, domain, labeling, angle_tol=1e-3):
    """Sharp principal-eigenvalue formula, when its geometry holds.

    Requires a single principal well containing every interior minimum whose
    boundary contacts are all critical saddles with normals aligned to the
    negative Hessian direction.  Then

        lambda_1 ~ (2/pi) [sum_k |mu_d(z_k)| |det Hess(z_k)|^(-1/2) / B] h e^(-2E/h)

    which coincides with the generic evaluator of the deepest well (K1 = 0).
    Geometry failures yield an inapplicable result, never a formula.
    """
    reasons = []
    principals = [lab for lab in labeling.labels if lab.principal]
    if len(principals) != 1:
        reasons.append(f"{len(principals)} principal wells, need exactly 1")
        return PrincipalFormulaResult(False, reasons)
    well = principals[0]
    in_well = set()
    for lab in labeling.labels:
        if set(lab.node_set.tolist()) <= set(well.node_set.tolist()):
            in_well.add(lab.minimum.ident)
    if len(in_well) != len(labeling.minima):
        reasons.append("sublevel set below the boundary minimum misses some interior minima")
    contacts = [z for z in well.saddles if z.on_boundary]
    interior_top = [z for z in well.saddles if not z.on_boundary]
    if interior_top:
        reasons.append("well boundary carries interior separating saddles at the top level")
    for z in contacts:
        if z.saddle_kind != "boundary_critical":
            reasons.append(
                f"contact {z.ident} at {z.location} is not a critical saddle point"
            )
        elif z.alignment_angle is None or z.alignment_angle > angle_tol:
            reasons.append(f"contact {z.ident} normal not aligned with the negative direction")
    if reasons:
        return PrincipalFormulaResult(False, reasons)
    B = _well_b_constant(well.argmin)
    s = sum(abs(z.mu_d) * abs(z.det_hessian()) ** -0.5 for z in contacts)
    prefactor = (2.0 / math.pi) * s / B
    return PrincipalFormulaResult(
        applicable=True,
        reasons=[],
        prefactor=prefactor,
        energy=well.energy,
        saddle_ids=tuple(z.ident for z in contacts),
    )
