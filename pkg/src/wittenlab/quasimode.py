"""Well-adapted quasi-modes, their Dirichlet energies and diagnostics.

Each labeled minimum x gets psi_x = phi_x e^{-f/h} / Z_x where phi_x is 1 on
a plateau covering the well, crosses each saddle of j(x) through a cylinder
carrying a one-dimensional profile in the saddle's normal coordinate, and
decays to zero across a collar that sits strictly above the saddle level.
The collar ramp is the discrete capacitor profile in the distance coordinate
(the energy minimizer given the f-landscape); a plain distance smoothstep
leaks an O(1)-in-h fraction of the cylinder energy in tight geometries and
would drown the constants being validated.

All integrals are trapezoid sums on the solver grid; energies use midpoint
gradients on grid edges so that quasi-mode and operator discretizations stay
comparable at the same order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.ndimage import distance_transform_edt

from .field import evaluate_on_grid

__all__ = [
    "QuasimodeError",
    "CutoffProfile",
    "Cylinder",
    "QuasiMode",
    "QuasimodeFamily",
    "InteractionMatrices",
    "EnergyBreakdown",
    "build_quasimode_family",
    "build_quasimode",
    "dirichlet_energy",
    "interaction_matrix",
    "projector_diagnostics",
    "ims_identity_check",
    "make_quadratic_partition",
    "fan_inequality_check",
]


class QuasimodeError(Exception):
    """Geometry failure; ``kind`` steers the rebuild ('delta', 'rho' or 'both')."""

    def __init__(self, message, kind="both"):
        super().__init__(message)
        self.kind = kind


def _smoothstep5(s):
    s = np.clip(s, 0.0, 1.0)
    return s * s * s * (10.0 + s * (-15.0 + 6.0 * s))


@dataclass(frozen=True)
class CutoffProfile:
    """Even quintic-smoothstep bump: 1 on [-d1/2, d1/2], 0 outside [-d1, d1]."""

    delta1: float
    delta2: float

    def chi(self, t):
        a = np.abs(np.asarray(t, dtype=float))
        inner = 0.5 * self.delta1
        s = (a - inner) / max(inner, 1e-300)
        return np.where(a <= inner, 1.0, 1.0 - _smoothstep5(s))


@dataclass
class Cylinder:
    """Saddle-crossing window with its 1-D transition profile.

    ``axis`` is the profile coordinate direction: the outward normal for
    boundary saddles, the negative-curvature eigenvector oriented so the
    owning well lies on the v_d < 0 side for interior ones.
    """

    saddle: object  # CriticalPoint
    kind: str
    center: np.ndarray
    axis: np.ndarray
    delta1: float
    delta2: float
    mu: float
    h: float
    vd_range: tuple
    table_v: np.ndarray = dc_field(default=None, repr=False)
    table_phi: np.ndarray = dc_field(default=None, repr=False)

    def __post_init__(self):
        lo, hi = self.vd_range
        v = np.linspace(lo, hi, 4001)
        chi = CutoffProfile(self.delta1, self.delta2).chi(v)
        if self.kind == "boundary_noncritical":
            w = np.exp(2.0 * self.mu * v / self.h)  # v <= 0 so w <= 1
        else:
            w = np.exp(-abs(self.mu) * v * v / self.h)
        dens = chi * w
        dv = v[1] - v[0]
        seg = 0.5 * (dens[1:] + dens[:-1]) * dv
        tail = np.concatenate([np.cumsum(seg[::-1])[::-1], [0.0]])
        if tail[0] <= 0.0:
            raise QuasimodeError("degenerate cylinder profile")
        self.table_v = v
        self.table_phi = tail / tail[0]

    def coords(self, points):
        rel = points - self.center[None, :]
        vd = rel @ self.axis
        if points.shape[1] == 1:
            vp = np.zeros_like(vd)
        else:
            vp = np.abs(rel @ np.array([-self.axis[1], self.axis[0]]))
        return vd, vp

    def member_mask(self, points, pad=0.0):
        vd, vp = self.coords(points)
        lo, hi = self.vd_range
        return (vd >= lo - pad) & (vd <= hi + pad) & (vp <= self.delta2 + pad)

    def phi(self, points):
        vd, _ = self.coords(points)
        lo, hi = self.vd_range
        out = np.interp(vd, self.table_v, self.table_phi)
        out = np.where(vd <= lo, 1.0, out)
        out = np.where(vd >= hi, 0.0, out)
        return out


@dataclass
class QuasiMode:
    minimum: object  # CriticalPoint
    label: object  # WellLabel
    h: float
    psi: np.ndarray  # flat node values, trapezoid-normalized
    phi: np.ndarray
    log_norm: float  # log of the physical normalization Z_x
    cylinders: list
    cylinder_masks: dict  # saddle ident -> node mask
    plateau: np.ndarray
    collar: np.ndarray
    rho: float

    @property
    def support(self):
        return self.phi > 0.0


@dataclass
class QuasimodeFamily:
    modes: list
    grid_shape: tuple
    cell_volume: float
    edges: dict  # axis -> (a_idx, b_idx, f_mid, mesh)
    f_flat: np.ndarray
    halvings: int = 0

    def by_minimum(self, ident):
        for qm in self.modes:
            if qm.minimum.ident == ident:
                return qm
        raise KeyError(ident)


@dataclass
class EnergyBreakdown:
    total: float
    per_saddle: dict
    collar: float
    other: float


@dataclass
class InteractionMatrices:
    S: np.ndarray
    D: np.ndarray
    p: np.ndarray
    T: np.ndarray
    gram_psi: np.ndarray
    gram_theta: np.ndarray
    singular_values: np.ndarray  # of S, descending
    energies: np.ndarray  # ||d_{f,h} psi_i||^2


# ---------------------------------------------------------------------------
# Family construction
# ---------------------------------------------------------------------------


def _edge_arrays(field, domain, grid):
    pts = grid.nodes(domain).reshape(-1, domain.dimension)
    meshes = grid.mesh_widths(domain)
    edges = {}
    if domain.dimension == 1:
        a = np.arange(grid.shape[0] - 1)
        b = a + 1
        mid = 0.5 * (pts[a] + pts[b])
        edges[0] = (a, b, field.value(mid), float(meshes[0]))
    else:
        nx, ny = grid.shape
        idx = np.arange(nx * ny).reshape(nx, ny)
        a = idx[:-1, :].reshape(-1)
        b = idx[1:, :].reshape(-1)
        edges[0] = (a, b, field.value(0.5 * (pts[a] + pts[b])), float(meshes[0]))
        a = idx[:, :-1].reshape(-1)
        b = idx[:, 1:].reshape(-1)
        edges[1] = (a, b, field.value(0.5 * (pts[a] + pts[b])), float(meshes[1]))
    return edges


def _component_from(start_nodes, allowed, shape):
    """Connected component (axis adjacency) of ``allowed`` seeded at start_nodes."""
    from collections import deque

    allowed = allowed.reshape(-1)
    seen = np.zeros_like(allowed)
    ny = shape[1] if len(shape) == 2 else None
    n = allowed.size
    q = deque()
    for s in start_nodes:
        s = int(s)
        if allowed[s] and not seen[s]:
            seen[s] = True
            q.append(s)
    while q:
        i = q.popleft()
        if ny is None:
            nbrs = [j for j in (i - 1, i + 1) if 0 <= j < n]
        else:
            x, y = divmod(i, ny)
            nbrs = []
            if x > 0:
                nbrs.append(i - ny)
            if x < shape[0] - 1:
                nbrs.append(i + ny)
            if y > 0:
                nbrs.append(i - 1)
            if y < ny - 1:
                nbrs.append(i + 1)
        for j in nbrs:
            if allowed[j] and not seen[j]:
                seen[j] = True
                q.append(j)
    return seen.astype(bool)


def _saddle_axis(z, label):
    """Profile axis: outward normal, or eigenvector oriented away from the well."""
    if z.on_boundary:
        return np.array(z.normal, dtype=float)
    vd = z.hess_eigenvectors[:, 0].copy()
    if np.dot(vd, label.minimum.location - z.location) > 0:
        vd = -vd
    n = np.linalg.norm(vd)
    return vd / n


def _default_deltas(z, h, saddle_locs, min_locs, domain, meshes):
    others = [
        float(np.linalg.norm(z.location - s))
        for s in saddle_locs
        if np.linalg.norm(z.location - s) > 1e-12
    ]
    to_minima = [float(np.linalg.norm(z.location - m)) for m in min_locs]
    diam = math.sqrt(sum((u - l) ** 2 for l, u in zip(domain.lower, domain.upper)))
    base = min(others + to_minima + [diam])
    if not z.on_boundary:
        to_bdry = min(
            min(z.location[a] - domain.lower[a], domain.upper[a] - z.location[a])
            for a in range(len(domain.lower))
        )
        base = min(base, 2.0 * to_bdry)
    delta2 = base / 3.0
    cap = 0.48 * min(to_minima + others + [diam])
    mesh = float(np.max(meshes))
    if z.saddle_kind == "boundary_noncritical":
        decay = h / (2.0 * z.normal_derivative)
        delta1 = min(cap, max(8.0 * decay, 6.0 * mesh))
    else:
        sigma = math.sqrt(h / (2.0 * abs(z.mu_d)))
        delta1 = min(cap, max(3.2 * sigma, 6.0 * mesh))
    return delta1, delta2


def _next_level_above(value, levels, tol):
    above = [v for v in levels if v > value + tol]
    return min(above) if above else None


def build_quasimode_family(labeling, field, domain, grid, h, max_halvings=6):
    """Build all quasi-modes at parameter h with validated geometry.

    Cylinder sizes default per saddle (length resolving the 1-D profile,
    capped by the local geometry); plateau margins default to a fraction of
    the gap to the next critical level.  The family is rebuilt with halved
    sizes whenever a wall/containment condition or a pairwise support
    relation (disjoint, nested, shared-cylinder overlap only) fails; failure
    after ``max_halvings`` rounds raises.
    """
    gf = evaluate_on_grid(field, domain, grid)
    f_flat = gf.f.reshape(-1)
    pts = grid.nodes(domain).reshape(-1, domain.dimension)
    meshes = grid.mesh_widths(domain)
    boundary = grid.boundary_mask().reshape(-1)
    edges = _edge_arrays(field, domain, grid)

    all_saddles = {z.ident: z for lab in labeling.labels for z in lab.saddles}
    saddle_locs = [z.location for z in all_saddles.values()]
    min_locs = [m.location for m in labeling.minima]
    level_pool = sorted(
        {m.value for m in labeling.minima}
        | {z.value for z in all_saddles.values()}
        | {lab.cut_level for lab in labeling.labels}
        | {float(np.max(f_flat))}
    )

    shrink_delta = 1.0
    shrink_rho = 1.0
    last_err = None
    for attempt in range(2 * max_halvings + 1):
        try:
            fam = _build_once(
                labeling, field, domain, grid, h, f_flat, pts, meshes, boundary,
                edges, all_saddles, saddle_locs, min_locs, level_pool,
                shrink_delta, shrink_rho,
            )
            fam.halvings = attempt
            return fam
        except QuasimodeError as err:
            last_err = err
            if err.kind in ("delta", "both"):
                shrink_delta *= 0.5
            if err.kind in ("rho", "both"):
                shrink_rho *= 0.5
            if shrink_delta < 2.0 ** -max_halvings or shrink_rho < 2.0 ** -max_halvings:
                break
    raise QuasimodeError(f"quasimode geometry failed after {max_halvings} halvings: {last_err}")


def build_quasimode(labeling, field, domain, grid, h, minimum_id=None, max_halvings=6):
    """Single quasi-mode out of a validated family build."""
    fam = build_quasimode_family(labeling, field, domain, grid, h, max_halvings)
    if minimum_id is None:
        return fam.modes[0]
    return fam.by_minimum(minimum_id)


def _build_once(
    labeling, field, domain, grid, h, f_flat, pts, meshes, boundary, edges,
    all_saddles, saddle_locs, min_locs, level_pool, shrink_delta, shrink_rho,
):
    d = domain.dimension
    mesh = float(np.max(meshes))
    cellvol = float(np.prod(meshes))
    tol = labeling.tol_level

    geo = {
        zid: tuple(
            x * shrink_delta
            for x in _default_deltas(z, h, saddle_locs, min_locs, domain, meshes)
        )
        for zid, z in all_saddles.items()
    }

    cyl_masks = {}
    prepared = []
    for lab in labeling.labels:
        cylinders = []
        for z in lab.saddles:
            d1, d2 = geo[z.ident]
            axis = _saddle_axis(z, lab)
            mu = z.normal_derivative if z.saddle_kind == "boundary_noncritical" else z.mu_d
            vd_range = (-2.0 * d1, 0.0) if z.on_boundary else (-2.0 * d1, 2.0 * d1)
            cyl = Cylinder(
                saddle=z, kind=z.saddle_kind, center=z.location, axis=axis,
                delta1=d1, delta2=d2, mu=mu, h=h, vd_range=vd_range,
            )
            cylinders.append(cyl)
            if z.ident not in cyl_masks:
                cyl_masks[z.ident] = cyl.member_mask(pts, pad=1e-12)
        prepared.append((lab, cylinders))

    idents = sorted(cyl_masks)
    for i, zi in enumerate(idents):
        for zj in idents[i + 1 :]:
            if np.any(cyl_masks[zi] & cyl_masks[zj]):
                raise QuasimodeError(f"cylinders {zi} and {zj} overlap", kind="delta")
    any_cyl = np.zeros(f_flat.size, dtype=bool)
    for m in cyl_masks.values():
        any_cyl |= m

    if d == 2:
        for lab, cylinders in prepared:
            for cyl in cylinders:
                vd, vp = cyl.coords(pts)
                lo, hi = cyl.vd_range
                shell = (
                    (vp >= cyl.delta2 - 1.4 * mesh)
                    & (vp <= cyl.delta2 + 1.4 * mesh)
                    & (vd >= lo)
                    & (vd <= hi)
                )
                if np.any(shell):
                    margin = float(np.min(f_flat[shell])) - cyl.saddle.value
                    if margin <= 0.0:
                        raise QuasimodeError(
                            f"cylinder wall of saddle {cyl.saddle.ident} dips below its level",
                            kind="delta",
                        )

    min_nodes = {
        m.ident: int(np.argmin(np.linalg.norm(pts - m.location, axis=1)))
        for m in labeling.minima
    }
    for lab, cylinders in prepared:
        for cyl in cylinders:
            cmask = cyl_masks[cyl.saddle.ident]
            if np.any(cmask) and float(np.min(f_flat[cmask])) <= lab.minimum.value:
                raise QuasimodeError(
                    f"cylinder of saddle {cyl.saddle.ident} dips below minimum {lab.minimum.ident}",
                    kind="delta",
                )
            for m in labeling.minima:
                if cmask[min_nodes[m.ident]]:
                    raise QuasimodeError(
                        f"cylinder of saddle {cyl.saddle.ident} swallows minimum {m.ident}",
                        kind="delta",
                    )

    modes = []
    taken = any_cyl.copy()  # gradient zones reserved by cylinders and built collars
    for lab, cylinders in prepared:
        own_cyl = np.zeros(f_flat.size, dtype=bool)
        for cyl in cylinders:
            own_cyl |= cyl_masks[cyl.saddle.ident]
        nxt = _next_level_above(lab.saddle_value, level_pool, 10 * tol)
        gap = (nxt - lab.saddle_value) if nxt is not None else float(np.max(f_flat)) - lab.saddle_value
        rho = max(0.0, 0.8 * gap * shrink_rho)
        foreign_cyl = any_cyl & ~own_cyl
        well_mask = np.zeros(f_flat.size, dtype=bool)
        well_mask[lab.node_set] = True

        # the plateau may cross foreign saddles (phi stays 1 there); only the
        # mode's own cylinders carve it.  Shrink the margin until the plateau
        # leaves room for a decay collar before foreign structures.
        for _trial in range(16):
            allowed = (f_flat < lab.saddle_value + rho) & ~own_cyl & ~boundary
            plateau = _component_from([min_nodes[lab.minimum.ident]], allowed, grid.shape)
            dist = distance_transform_edt(
                ~plateau.reshape(grid.shape), sampling=tuple(meshes)
            ).reshape(-1)
            forbidden = (boundary | (taken & ~own_cyl)) & (dist > 0)
            w_max = (
                float(np.min(dist[forbidden])) - 2.01 * mesh
                if np.any(forbidden)
                else 4.0 * mesh
            )
            if rho <= 0.0 or w_max >= 4.0 * mesh or not np.any(forbidden):
                break
            rho *= 0.6
        if np.any(well_mask & ~own_cyl & ~boundary & ~plateau):
            raise QuasimodeError(
                f"plateau of minimum {lab.minimum.ident} does not cover its well",
                kind="delta",
            )
        for m in labeling.minima:
            if plateau[min_nodes[m.ident]] and not well_mask[min_nodes[m.ident]]:
                raise QuasimodeError(
                    f"plateau of minimum {lab.minimum.ident} swallows foreign minimum {m.ident}",
                    kind="rho",
                )

        phi = np.zeros(f_flat.size)
        phi[plateau] = 1.0
        for cyl in cylinders:
            cmask = cyl_masks[cyl.saddle.ident]
            phi[cmask] = cyl.phi(pts[cmask])
        collar = np.zeros(f_flat.size, dtype=bool)
        if w_max > 0.5 * mesh:
            collar = (
                ~plateau
                & ~any_cyl
                & ~boundary
                & (dist > 0)
                & (dist <= w_max)
                & (f_flat >= lab.saddle_value + 0.98 * rho - 10 * tol)
            )
            collar &= ~forbidden
            if np.any(collar):
                phi[collar] = _capacitor_profile(
                    dist[collar], f_flat[collar], w_max, mesh, lab.saddle_value + rho, h
                )

        taken |= collar
        psi = phi * np.exp(-(f_flat - lab.minimum.value) / h)
        zt = math.sqrt(float(np.sum(psi * psi)) * cellvol)
        if zt <= 0.0:
            raise QuasimodeError(f"empty quasimode for minimum {lab.minimum.ident}")
        modes.append(
            QuasiMode(
                minimum=lab.minimum,
                label=lab,
                h=h,
                psi=psi / zt,
                phi=phi,
                log_norm=math.log(zt) - lab.minimum.value / h,
                cylinders=cylinders,
                cylinder_masks={c.saddle.ident: cyl_masks[c.saddle.ident] for c in cylinders},
                plateau=plateau,
                collar=collar,
                rho=rho,
            )
        )

    _validate_supports(modes, edges, tol)
    return QuasimodeFamily(
        modes=modes,
        grid_shape=grid.shape,
        cell_volume=cellvol,
        edges=edges,
        f_flat=f_flat,
    )


def _capacitor_profile(dists, fvals, w_max, mesh, base_level, h):
    """Monotone 1 -> 0 ramp in distance, capacitor-weighted by exp(2 f / h)."""
    nbin = max(2, int(math.ceil(w_max / mesh)))
    bin_edges = np.linspace(0.0, w_max, nbin + 1)
    which = np.clip(np.searchsorted(bin_edges, dists, side="right") - 1, 0, nbin - 1)
    q = np.full(nbin, np.nan)
    for b in range(nbin):
        sel = which == b
        if np.any(sel):
            q[b] = float(np.min(fvals[sel]))
    last = base_level
    for b in range(nbin):
        if not np.isfinite(q[b]):
            q[b] = last
        last = q[b]
    omega = np.exp(np.clip(2.0 * (q - base_level) / h, -700.0, 700.0))
    tail = np.concatenate([np.cumsum(omega[::-1])[::-1], [0.0]])
    return np.interp(dists, bin_edges, tail / tail[0])


def _gradient_edge_masks(qm, edges):
    return {axis: qm.phi[a] != qm.phi[b] for axis, (a, b, fm, mesh) in edges.items()}


def _validate_supports(modes, edges, tol):
    """Pairwise gradient supports: disjoint unless the wells share a saddle,
    and shared-pair overlap confined to shared cylinders or high ground."""
    active = [_gradient_edge_masks(qm, edges) for qm in modes]
    for i in range(len(modes)):
        for j in range(i + 1, len(modes)):
            qi, qj = modes[i], modes[j]
            shared = set(qi.cylinder_masks) & set(qj.cylinder_masks)
            for axis, (a, b, fm, mesh) in edges.items():
                both = active[i][axis] & active[j][axis]
                if not np.any(both):
                    continue
                if not shared:
                    raise QuasimodeError(
                        f"gradient supports of minima {qi.minimum.ident} and "
                        f"{qj.minimum.ident} overlap without a shared saddle",
                        kind="rho",
                    )
                in_shared = np.zeros(a.size, dtype=bool)
                for z in shared:
                    m = qi.cylinder_masks[z]
                    in_shared |= m[a] & m[b]
                margin = 0.5 * min(qi.rho, qj.rho)
                high = fm >= qi.label.saddle_value + margin - 10 * tol
                if not np.all(~both | in_shared | high):
                    n_bad = int(np.sum(both & ~in_shared & ~high))
                    raise QuasimodeError(
                        f"minima {qi.minimum.ident}/{qj.minimum.ident}: {n_bad} "
                        "overlapping low edges outside shared cylinders",
                        kind="rho",
                    )


# ---------------------------------------------------------------------------
# Energies and interaction matrices
# ---------------------------------------------------------------------------


def _edge_splits(qm, a, b):
    """Disjoint edge masks: one per cylinder (by saddle ident), then collar."""
    remaining = np.ones(a.size, dtype=bool)
    splits = {}
    for z, m in qm.cylinder_masks.items():
        sel = (m[a] | m[b]) & remaining
        splits[z] = sel
        remaining &= ~sel
    collar_sel = (qm.collar[a] | qm.collar[b]) & remaining
    remaining &= ~collar_sel
    return splits, collar_sel, remaining


def dirichlet_energy(qm, family, per_region=True):
    """Quadratic-form energy of one quasi-mode with per-cylinder attribution.

    Midpoint-gradient trapezoid quadrature of h^2 |grad(e^{f/h} psi)|^2
    e^{-2f/h}; exponentials factor through the well bottom so the sums stay
    in range for any relevant h.
    """
    h = qm.h
    fx = qm.minimum.value
    zt_sq = math.exp(2.0 * (qm.log_norm + fx / h))  # norm of phi e^{-(f-fx)/h}, squared
    total = 0.0
    per = {}
    collar = 0.0
    other = 0.0
    for axis, (a, b, fm, mesh) in family.edges.items():
        du = (qm.phi[b] - qm.phi[a]) / mesh
        act = du != 0.0
        if not np.any(act):
            continue
        vals = (h * h) * du[act] ** 2 * np.exp(-2.0 * (fm[act] - fx) / h) * family.cell_volume
        vals /= zt_sq
        total += float(np.sum(vals))
        if per_region:
            splits, collar_sel, rest = _edge_splits(qm, a[act], b[act])
            for z, sel in splits.items():
                per[z] = per.get(z, 0.0) + float(np.sum(vals[sel]))
            collar += float(np.sum(vals[collar_sel]))
            other += float(np.sum(vals[rest]))
    return EnergyBreakdown(total=total, per_saddle=per, collar=collar, other=other)


def _pair_energy(qi, qj, family):
    """<d psi_i, d psi_j> via the same midpoint quadrature; exact 0 when the
    gradient supports share no edge."""
    h = qi.h
    fi, fj = qi.minimum.value, qj.minimum.value
    total = 0.0
    found = False
    for axis, (a, b, fm, mesh) in family.edges.items():
        dui = (qi.phi[b] - qi.phi[a]) / mesh
        duj = (qj.phi[b] - qj.phi[a]) / mesh
        act = (dui != 0.0) & (duj != 0.0)
        if not np.any(act):
            continue
        found = True
        expo = -(2.0 * fm[act] - fi - fj) / h
        total += float(
            np.sum((h * h) * dui[act] * duj[act] * np.exp(expo)) * family.cell_volume
        )
    if not found:
        return 0.0
    scale = math.exp(qi.log_norm + fi / h + qj.log_norm + fj / h)
    return total / scale


def interaction_matrix(family, order=None):
    """Interaction matrices S, D, T plus Gram matrices and singular values.

    ``order`` lists minimum idents defining the row/column order (defaults to
    family order).  S_{i,j} = <d psi_j, d psi_i> / ||d psi_i||; D carries the
    pure scales h^{p_j} e^{-E_j/h} with p_j = 1/4 on wells with
    boundary-noncritical saddles, else 1/2.
    """
    modes = family.modes if order is None else [family.by_minimum(i) for i in order]
    m = len(modes)
    h = modes[0].h
    B = np.zeros((m, m))
    for i in range(m):
        B[i, i] = dirichlet_energy(modes[i], family, per_region=False).total
        for j in range(i + 1, m):
            B[i, j] = B[j, i] = _pair_energy(modes[i], modes[j], family)
    norms = np.sqrt(np.diag(B))
    S = B / norms[:, None]  # S[i, j] = B[j, i]/||d psi_i|| (B symmetric)
    p = np.array(
        [
            0.25
            if any(c.kind == "boundary_noncritical" for c in qm.cylinders)
            else 0.5
            for qm in modes
        ]
    )
    E = np.array([qm.label.energy for qm in modes])
    D = np.diag(h**p * np.exp(-E / h))
    T = S @ np.linalg.inv(D)
    gram_psi = np.zeros((m, m))
    for i in range(m):
        for j in range(m):
            gram_psi[i, j] = float(np.sum(modes[i].psi * modes[j].psi)) * family.cell_volume
    gram_theta = B / np.outer(norms, norms)
    sing = np.linalg.svd(S, compute_uv=False)
    return InteractionMatrices(
        S=S,
        D=D,
        p=p,
        T=T,
        gram_psi=gram_psi,
        gram_theta=gram_theta,
        singular_values=sing,
        energies=np.diag(B).copy(),
    )


# ---------------------------------------------------------------------------
# Projector diagnostics against solver eigenvectors
# ---------------------------------------------------------------------------


@dataclass
class ProjectorReport:
    skipped: bool
    reason: str
    residual_ratios: list  # ||(1-pi) psi_x|| / ||d psi_x||
    quadra_bounds: list  # rigorous bound values for the same quantity
    gram_condition: float | None
    singular_match: list  # (eta^2, lambda, relative difference)


def projector_diagnostics(family, matrices, spectrum_result, cluster_count, grid, op=None):
    """Compare quasi-modes against the numeric small-cluster eigenvectors.

    Reports ||(1 - pi_h) psi_x|| relative to ||d_{f,h} psi_x||, the rigorous
    spectral-cutoff pair (residual^2, Q(psi_x)/lambda_{m0+1}) with Q the
    discrete operator form, the conditioning of the projected Gram matrix,
    and the match between squared singular values of S (ascending) and the
    small eigenvalues.
    """
    m0 = len(family.modes)
    if cluster_count != m0 or spectrum_result.eigenvectors is None:
        return ProjectorReport(
            skipped=True,
            reason=f"cluster count {cluster_count} != {m0} quasi-modes or no vectors",
            residual_ratios=[],
            quadra_bounds=[],
            gram_condition=None,
            singular_match=[],
        )
    interior = ~np.asarray(grid.boundary_mask()).reshape(-1)
    V = spectrum_result.eigenvectors[:, :m0]
    lam_next = float(spectrum_result.eigenvalues[m0])
    ratios, bounds, proj = [], [], []
    for qm, energy in zip(family.modes, matrices.energies):
        psi_int = qm.psi[interior]
        psi_hat = psi_int / np.linalg.norm(psi_int)
        coeff = V.T @ psi_hat
        p = V @ coeff
        r = float(np.linalg.norm(psi_hat - p))
        ratios.append(r / math.sqrt(energy))
        if op is not None:
            # shift by the flat spectrum bottom (the stencil operator may dip
            # slightly negative at the mesh floor) and allow for the matvec
            # roundoff in the form value itself
            q_disc = float(psi_hat @ op.matvec(psi_hat))
            flat = spectrum_result.flat_eigenvalues
            lam_floor = min(0.0, float(flat.min())) if flat is not None else 0.0
            slack = 64.0 * np.finfo(float).eps * op.norm_inf()
            bounds.append((r * r, (q_disc - lam_floor + slack) / (lam_next - lam_floor)))
        proj.append(p)
    P = np.array(proj).T
    G = P.T @ P
    cond = float(np.linalg.cond(G))
    eta_sq = np.sort(matrices.singular_values**2)
    lam = np.sort(spectrum_result.eigenvalues[:m0])
    match = [
        (float(e2), float(l), float(e2 / l - 1.0) if l > 0 else float("nan"))
        for e2, l in zip(eta_sq, lam)
    ]
    return ProjectorReport(
        skipped=False,
        reason="",
        residual_ratios=ratios,
        quadra_bounds=bounds,
        gram_condition=cond,
        singular_match=match,
    )


# ---------------------------------------------------------------------------
# Localization identity and singular-value inequality checks
# ---------------------------------------------------------------------------


def make_quadratic_partition(domain, grid, center, width):
    """Two-bump quadratic partition chi_1^2 + chi_2^2 = 1 along the first axis.

    chi_1 = cos(pi/2 * s), chi_2 = sin(pi/2 * s) with s a quintic smoothstep
    across [center - width, center + width]; returns (chi, |grad chi|^2)
    pairs with exact derivatives.
    """
    pts = grid.nodes(domain).reshape(-1, domain.dimension)
    x = pts[:, 0]
    t = np.clip((x - (center - width)) / (2.0 * width), 0.0, 1.0)
    s = _smoothstep5(t)
    ds = np.where((t > 0) & (t < 1), 30.0 * t**2 * (1.0 - t) ** 2 / (2.0 * width), 0.0)
    a = 0.5 * math.pi * s
    da = 0.5 * math.pi * ds
    chi1, chi2 = np.cos(a), np.sin(a)
    g1 = (np.sin(a) * da) ** 2
    g2 = (np.cos(a) * da) ** 2
    shape = grid.shape
    return [
        (chi1.reshape(shape), g1.reshape(shape)),
        (chi2.reshape(shape), g2.reshape(shape)),
    ]


def ims_identity_check(op, grid, h, partition, trials=20, seed=0, test_functions=None):
    """Max residual of the localization identity over random Dirichlet vectors.

    For psi vanishing on the boundary, Q(psi) = sum_j Q(chi_j psi) -
    h^2 sum_j || |grad chi_j| psi ||^2 up to discretization order; the
    returned residual is normalized by ||psi||^2 (trapezoid).
    """
    chi_sum = sum(c**2 for c, _ in partition)
    if float(np.max(np.abs(chi_sum - 1.0))) > 1e-12:
        raise QuasimodeError("partition of unity violated beyond 1e-12")
    interior = ~_boundary_mask(grid.shape).reshape(-1)
    rng = np.random.default_rng(seed)
    cellvol = op.cell_volume
    worst = 0.0
    funcs = []
    if test_functions is not None:
        funcs = [np.asarray(f).reshape(-1) for f in test_functions]
    for t in range(trials if test_functions is None else len(funcs)):
        if test_functions is None:
            psi = np.zeros(int(np.prod(grid.shape)))
            psi[interior] = rng.standard_normal(int(interior.sum()))
        else:
            psi = funcs[t].copy()
            psi[~interior] = 0.0
        q_full = op.quadratic_form(psi[interior])
        q_parts = 0.0
        corr = 0.0
        for chi, grad_sq in partition:
            cp = (chi.reshape(-1) * psi)[interior]
            q_parts += op.quadratic_form(cp)
            corr += h * h * float(np.sum(grad_sq.reshape(-1) * psi * psi)) * cellvol
        norm2 = float(np.sum(psi * psi)) * cellvol
        res = abs(q_full - (q_parts - corr)) / norm2
        worst = max(worst, res)
    return worst


def _boundary_mask(shape):
    mask = np.zeros(shape, dtype=bool)
    for a, n in enumerate(shape):
        sl = [slice(None)] * len(shape)
        sl[a] = 0
        mask[tuple(sl)] = True
        sl[a] = n - 1
        mask[tuple(sl)] = True
    return mask


def fan_inequality_check(trials=1000, size=8, seed=0, slack=1e-10):
    """Random check of eta_j(ABC) <= ||A|| ||C|| eta_j(B) for all j."""
    if size > 12:
        raise QuasimodeError("size capped at 12")
    rng = np.random.default_rng(seed)
    worst = -np.inf
    for _ in range(trials):
        A = rng.standard_normal((size, size))
        B = rng.standard_normal((size, size))
        C = rng.standard_normal((size, size))
        eta_abc = np.linalg.svd(A @ B @ C, compute_uv=False)
        eta_b = np.linalg.svd(B, compute_uv=False)
        bound = np.linalg.norm(A, 2) * np.linalg.norm(C, 2) * eta_b
        worst = max(worst, float(np.max(eta_abc - bound)))
    return worst <= slack, worst
