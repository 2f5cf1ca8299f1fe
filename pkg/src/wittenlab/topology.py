"""Critical points, sublevel merge structure, well labeling and hypotheses.

The labeling machinery assigns to every interior local minimum x a critical
sublevel component C(x) and the set j(x) of separating saddle points (interior
index-1 points and boundary generalized saddles) on its boundary, recursively
from the principal wells downward.  Everything is grid-discrete: sublevel
components come from a union-find filtration over grid nodes, saddles and
boundary contacts are Newton-refined against the exact field.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field

import numpy as np

from .field import evaluate_on_grid

__all__ = [
    "TopologyError",
    "DegenerateCriticalPointError",
    "NewtonError",
    "LabelingError",
    "CriticalPoint",
    "MergeStructure",
    "SaddleSet",
    "WellLabel",
    "WellLabeling",
    "HypothesisReport",
    "find_critical_points",
    "build_merge_structure",
    "separating_saddles",
    "build_jmap",
    "check_hypotheses",
    "topology_to_json",
]


class TopologyError(Exception):
    pass


class DegenerateCriticalPointError(TopologyError):
    pass


class NewtonError(TopologyError):
    pass


class LabelingError(TopologyError):
    pass


# ---------------------------------------------------------------------------
# Critical points
# ---------------------------------------------------------------------------


@dataclass
class CriticalPoint:
    """Newton-refined critical location with classification data.

    For interior points ``index`` counts negative eigenvalues of the full
    Hessian.  Boundary records are critical points of f restricted to a face;
    there ``grad_norm`` may be nonzero, ``normal_derivative`` is the outward
    normal derivative and ``tangential_eigenvalues`` the spectrum of the
    face-restricted Hessian (empty in 1-D).  ``alignment_angle`` is filled for
    boundary points with vanishing full gradient: the angle between the
    outward normal and the eigenvector of the negative Hessian eigenvalue.
    """

    ident: int
    location: np.ndarray
    value: float
    index: int
    on_boundary: bool
    grad_norm: float
    hess_eigenvalues: np.ndarray
    hess_eigenvectors: np.ndarray
    normal: np.ndarray | None = None
    normal_derivative: float | None = None
    tangential_eigenvalues: np.ndarray | None = None
    alignment_angle: float | None = None
    separating: bool = False
    saddle_kind: str | None = None  # interior | boundary_critical | boundary_noncritical

    @property
    def mu_d(self):
        """Most negative Hessian eigenvalue (saddle curvature)."""
        return float(self.hess_eigenvalues[0])

    @property
    def is_critical(self):
        return self.grad_norm <= 0.0 or self.saddle_kind != "boundary_noncritical"

    def det_hessian(self):
        return float(np.prod(self.hess_eigenvalues))

    def det_tangential_hessian(self):
        if self.tangential_eigenvalues is None or len(self.tangential_eigenvalues) == 0:
            return 1.0  # empty product convention for 1-D faces
        return float(np.prod(self.tangential_eigenvalues))


def _newton(field, x0, domain, tol_grad, max_iter=50, leash=None, anchor=None):
    """Newton iteration for grad f = 0 started at x0; returns None on failure."""
    x = np.array(x0, dtype=float)
    for _ in range(max_iter):
        _, g, H = field.all(x)
        if np.linalg.norm(g) <= tol_grad:
            return x
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            return None
        x = x - step
        if leash is not None and np.linalg.norm(x - anchor) > leash:
            return None
        if not domain.contains(x, margin=-1e-9 * _domain_scale(domain)):
            return None
    _, g, _ = field.all(x)
    if np.linalg.norm(g) <= tol_grad * 100:
        return x
    raise NewtonError(f"Newton failed to converge from seed {np.asarray(x0)}")


def _domain_scale(domain):
    return float(max(u - l for l, u in zip(domain.lower, domain.upper)))


def _face_newton(field, domain, axis, coord, t0, tol_grad, bounds, max_iter=50):
    """1-D Newton along a box face for the tangential derivative (d=2)."""
    tang = 1 - axis
    t = float(t0)
    for _ in range(max_iter):
        p = np.zeros(2)
        p[axis] = coord
        p[tang] = t
        _, g, H = field.all(p)
        gt, htt = g[tang], H[tang, tang]
        if abs(gt) <= tol_grad:
            return t
        if htt == 0.0:
            return None
        t = t - gt / htt
        if t < bounds[0] - 1e-9 or t > bounds[1] + 1e-9:
            return None
    return t if abs(gt) <= tol_grad * 100 else None


def _classify(field, domain, loc, ident, tol_grad, tol_degenerate, on_boundary, normal=None):
    v, g, H = field.all(loc)
    gnorm = float(np.linalg.norm(g))
    eigvals, eigvecs = np.linalg.eigh(H)
    cp = CriticalPoint(
        ident=ident,
        location=np.array(loc, dtype=float),
        value=float(v),
        index=int(np.sum(eigvals < 0.0)),
        on_boundary=on_boundary,
        grad_norm=gnorm,
        hess_eigenvalues=eigvals,
        hess_eigenvectors=eigvecs,
        normal=None if normal is None else np.array(normal, dtype=float),
    )
    if on_boundary:
        cp.normal_derivative = float(np.dot(normal, g))
        d = field.dimension
        if d == 2:
            tang = np.argmin(np.abs(normal))  # tangential axis of the face
            cp.tangential_eigenvalues = np.array([H[tang, tang]])
        else:
            cp.tangential_eigenvalues = np.array([])
    if gnorm <= tol_grad:
        small = np.abs(eigvals) < tol_degenerate
        if np.any(small):
            raise DegenerateCriticalPointError(
                f"degenerate critical point at {np.asarray(loc)}: "
                f"Hessian eigenvalue {eigvals[np.argmin(np.abs(eigvals))]:.3e} "
                f"below tolerance {tol_degenerate:.3e}"
            )
        if on_boundary:
            vec = eigvecs[:, 0]  # eigenvector of the most negative eigenvalue
            cosang = abs(float(np.dot(vec, normal))) / float(np.linalg.norm(vec))
            cp.alignment_angle = float(np.arccos(np.clip(cosang, -1.0, 1.0)))
    else:
        # tangential index for boundary-noncritical points
        if on_boundary and cp.tangential_eigenvalues is not None:
            cp.index = int(np.sum(cp.tangential_eigenvalues < 0.0))
    return cp


def find_critical_points(field, domain, grid, tol_grad=None, tol_degenerate=None):
    """Locate and classify critical points of f in the closed box.

    Interior points are Newton-refined from grid cells where every discrete
    gradient component changes sign; boundary points are critical points of
    the face restriction (in 1-D, the endpoints).  Duplicates within two mesh
    widths collapse.  A Hessian eigenvalue below ``tol_degenerate`` at a
    critical point is a hard error: the downstream theory needs Morse data.
    """
    gf = evaluate_on_grid(field, domain, grid)
    d = domain.dimension
    meshes = grid.mesh_widths(domain)
    scale_g = max(1.0, float(np.max(np.sqrt(gf.grad_sq))))
    if tol_grad is None:
        tol_grad = 1e-9 * scale_g
    if tol_degenerate is None:
        hscale = max(1.0, float(np.max(np.abs(gf.lap))))
        tol_degenerate = 1e-5 * hscale

    axes = grid.axes(domain)
    seeds = []
    if d == 1:
        gx = gf.grad[:, 0]
        for i in range(grid.shape[0] - 1):
            if gx[i] == 0.0 or gx[i] * gx[i + 1] <= 0.0:
                seeds.append(np.array([0.5 * (axes[0][i] + axes[0][i + 1])]))
    else:
        gx, gy = gf.grad[..., 0], gf.grad[..., 1]
        cx_min = np.minimum.reduce([gx[:-1, :-1], gx[1:, :-1], gx[:-1, 1:], gx[1:, 1:]])
        cx_max = np.maximum.reduce([gx[:-1, :-1], gx[1:, :-1], gx[:-1, 1:], gx[1:, 1:]])
        cy_min = np.minimum.reduce([gy[:-1, :-1], gy[1:, :-1], gy[:-1, 1:], gy[1:, 1:]])
        cy_max = np.maximum.reduce([gy[:-1, :-1], gy[1:, :-1], gy[:-1, 1:], gy[1:, 1:]])
        hit = (cx_min <= 0.0) & (cx_max >= 0.0) & (cy_min <= 0.0) & (cy_max >= 0.0)
        for i, j in zip(*np.where(hit)):
            seeds.append(
                np.array(
                    [0.5 * (axes[0][i] + axes[0][i + 1]), 0.5 * (axes[1][j] + axes[1][j + 1])]
                )
            )

    face_margin = 0.25 * float(np.min(meshes))
    interior_pts = []
    for s in seeds:
        try:
            x = _newton(field, s, domain, tol_grad)
        except NewtonError:
            continue
        if x is None:
            continue
        # points that land on a face belong to the boundary scan
        on_face = any(
            abs(x[a] - domain.lower[a]) <= face_margin or abs(x[a] - domain.upper[a]) <= face_margin
            for a in range(d)
        )
        if not on_face and domain.contains(x):
            interior_pts.append(x)

    boundary_pts = []  # (location, normal)
    if d == 1:
        for axis, side, coord, normal in domain.faces():
            boundary_pts.append((np.array([coord]), normal))
    else:
        for axis, side, coord, normal in domain.faces():
            tang = 1 - axis
            face_axis = axes[tang]
            sl = [slice(None)] * 2
            sl[axis] = 0 if side == "lower" else grid.shape[axis] - 1
            gt = gf.grad[tuple(sl)][:, tang]
            bounds = (domain.lower[tang], domain.upper[tang])
            for i in range(len(face_axis) - 1):
                if gt[i] == 0.0 or gt[i] * gt[i + 1] <= 0.0:
                    t0 = 0.5 * (face_axis[i] + face_axis[i + 1])
                    t = _face_newton(field, domain, axis, coord, t0, tol_grad, bounds)
                    if t is None:
                        continue
                    # skip corners: handled on neither face
                    if t <= bounds[0] + face_margin or t >= bounds[1] - face_margin:
                        continue
                    p = np.zeros(2)
                    p[axis] = coord
                    p[tang] = t
                    # a nearly-critical face point may be a sloppy image of a
                    # genuine boundary critical point (the face restriction is
                    # degenerate there when the normal is misaligned); polish
                    # with the full Newton and keep the result if it stays on
                    # this face
                    _, g_full, _ = field.all(p)
                    if 0.0 < np.linalg.norm(g_full) < scale_g * 1e-1:
                        try:
                            q = _newton(field, p, domain, tol_grad, leash=10 * float(np.max(meshes)), anchor=p)
                        except NewtonError:
                            q = None
                        if q is not None and abs(q[axis] - coord) <= face_margin:
                            p = q.copy()
                            p[axis] = coord
                    boundary_pts.append((p, normal))

    dedup_radius = 2.0 * float(np.max(meshes))
    points = []  # (loc, on_boundary, normal)
    for p, normal in boundary_pts:
        if all(np.linalg.norm(p - q[0]) > dedup_radius or not q[1] for q in points):
            points.append((p, True, normal))
    for p in interior_pts:
        if all(np.linalg.norm(p - q[0]) > dedup_radius for q in points):
            points.append((p, False, None))

    crits = []
    for loc, on_b, normal in points:
        crits.append(
            _classify(field, domain, loc, len(crits), tol_grad, tol_degenerate, on_b, normal)
        )
    crits.sort(key=lambda c: (c.value, tuple(c.location)))
    for i, c in enumerate(crits):
        c.ident = i
    return crits


# ---------------------------------------------------------------------------
# Merge structure (union-find filtration over grid nodes)
# ---------------------------------------------------------------------------


@dataclass
class MergeEvent:
    level: float
    witness: int  # flat node index
    older: int  # component id (birth node) that survives
    younger: int  # component id merged in


@dataclass
class MergeStructure:
    """Union-find filtration of the grid by f with recorded merge events.

    Components are identified by their birth node (flat index).  ``parent``
    and ``merge_level`` encode the merge forest; ``first_contact`` holds, per
    component id, the earliest level from which the component rooted there
    contained a boundary node while it was still a root.
    """

    grid_shape: tuple
    f_flat: np.ndarray
    order: np.ndarray
    node_comp: np.ndarray
    parent: dict
    merge_level: dict
    merge_witness: dict
    first_contact: dict
    birth_level: dict
    events: list
    boundary_flat: np.ndarray

    def component_at_level(self, node, level, slack=0.0):
        """Component id containing ``node`` in the sublevel cut below ``level``."""
        c = int(self.node_comp[node])
        while c in self.parent and self.merge_level[c] < level - slack:
            c = self.parent[c]
        return c

    def chain(self, node):
        """Component chain (id, entry_level) from the node's leaf upward."""
        c = int(self.node_comp[node])
        out = [(c, self.birth_level.get(c, self.f_flat[node]))]
        while c in self.parent:
            lvl = self.merge_level[c]
            c = self.parent[c]
            out.append((c, lvl))
        return out

    def contact_level(self, node):
        """First level at which the growing component of ``node`` touches the boundary."""
        for comp, entry in self.chain(node):
            fc = self.first_contact.get(comp)
            if fc is not None:
                return max(fc, entry)
        return None

    def member_nodes(self, comp, level, slack=0.0):
        """Flat indices of nodes in component ``comp`` at the cut below ``level``."""
        sel = np.where(self.f_flat < level - slack)[0]
        out = [int(n) for n in sel if self.component_at_level(int(n), level, slack) == comp]
        return np.array(out, dtype=int)


def _flat_neighbors(shape):
    if len(shape) == 1:
        (n,) = shape

        def nb(i):
            out = []
            if i > 0:
                out.append(i - 1)
            if i < n - 1:
                out.append(i + 1)
            return out

        return nb
    nx, ny = shape

    def nb(i):
        x, y = divmod(i, ny)
        out = []
        if x > 0:
            out.append(i - ny)
        if x < nx - 1:
            out.append(i + ny)
        if y > 0:
            out.append(i - 1)
        if y < ny - 1:
            out.append(i + 1)
        return out

    return nb


def build_merge_structure(field, domain, grid):
    """Insert grid nodes in ascending f order and record component merges.

    Ties break by flat node index.  Each insertion unions with already
    inserted axis neighbors; the older (lower birth) component survives a
    merge.  Boundary contact levels propagate to the surviving root.
    """
    gf = evaluate_on_grid(field, domain, grid)
    f_flat = gf.f.reshape(-1)
    boundary_flat = grid.boundary_mask().reshape(-1)
    n = f_flat.size
    order = np.lexsort((np.arange(n), f_flat))
    nb = _flat_neighbors(grid.shape)

    uf_parent = np.full(n, -1, dtype=int)  # union-find over nodes; -1 = not inserted
    comp_of_root = {}
    node_comp = np.full(n, -1, dtype=int)
    parent, merge_level, merge_witness = {}, {}, {}
    first_contact, birth_level = {}, {}
    birth_order = {}
    events = []

    def find(i):
        root = i
        while uf_parent[root] != root:
            root = uf_parent[root]
        while uf_parent[i] != root:
            uf_parent[i], i = root, uf_parent[i]
        return root

    for rank, i in enumerate(order):
        i = int(i)
        lvl = float(f_flat[i])
        uf_parent[i] = i
        roots = []
        for j in nb(i):
            if uf_parent[j] != -1:
                r = find(j)
                if r not in roots:
                    roots.append(r)
        if not roots:
            comp_of_root[i] = i
            birth_level[i] = lvl
            birth_order[i] = rank
            node_comp[i] = i
            if boundary_flat[i]:
                first_contact[i] = lvl
            continue
        roots.sort(key=lambda r: birth_order[comp_of_root[r]])
        main = roots[0]
        main_comp = comp_of_root[main]
        uf_parent[i] = main
        node_comp[i] = main_comp
        if boundary_flat[i] and main_comp not in first_contact:
            first_contact[main_comp] = lvl
        for r in roots[1:]:
            comp = comp_of_root[r]
            events.append(MergeEvent(level=lvl, witness=i, older=main_comp, younger=comp))
            parent[comp] = main_comp
            merge_level[comp] = lvl
            merge_witness[comp] = i
            if comp in first_contact and main_comp not in first_contact:
                first_contact[main_comp] = lvl
            uf_parent[r] = main
            del comp_of_root[r]

    return MergeStructure(
        grid_shape=grid.shape,
        f_flat=f_flat,
        order=order,
        node_comp=node_comp,
        parent=parent,
        merge_level=merge_level,
        merge_witness=merge_witness,
        first_contact=first_contact,
        birth_level=birth_level,
        events=events,
        boundary_flat=boundary_flat,
    )


# ---------------------------------------------------------------------------
# Separating saddles and boundary generalized saddles
# ---------------------------------------------------------------------------


def _nearest_node(grid, domain, p):
    idx = []
    axes = grid.axes(domain)
    for a in range(domain.dimension):
        idx.append(int(np.clip(round((p[a] - domain.lower[a]) / (axes[a][1] - axes[a][0])), 0, grid.shape[a] - 1)))
    if domain.dimension == 1:
        return idx[0]
    return idx[0] * grid.shape[1] + idx[1]


def _descending_seed_node(merge, grid, domain, z, direction, level, meshes, min_depth=0.0):
    """Node at least ``min_depth`` below ``level``, stepping from z along ``direction``."""
    for k in (3.0, 4.0, 6.0, 9.0):
        p = z + k * np.max(meshes) * direction
        if not domain.contains(p):
            continue
        node = _nearest_node(grid, domain, p)
        if merge.f_flat[node] < level - min_depth:
            return node
    return None


def _mesh_slack(crits, meshes, tol_level):
    hmax = max((float(np.max(np.abs(c.hess_eigenvalues))) for c in crits), default=1.0)
    return max(tol_level, 2.0 * hmax * float(np.max(meshes)) ** 2)


@dataclass
class SaddleSet:
    """Interior separating saddles plus boundary generalized saddles."""

    interior: list  # CriticalPoint with .separating set
    boundary: list  # CriticalPoint (contacts of principal wells)
    violations: list  # classification failures, (ident, reason)
    side_components: dict  # ident -> (comp_minus, comp_plus) at the saddle cut
    side_nodes: dict  # ident -> (node_minus, node_plus) seed nodes
    side_eps: dict  # ident -> cut width used for the side query
    slack: float


def separating_saddles(merge, crits, field, domain, grid, tol_level=None):
    """Flag separating interior saddles and classify boundary contact points.

    An interior index-1 point is separating when its two downhill sides lie in
    distinct sublevel components just below the saddle value.  Boundary
    points are classified case (a) (non-critical, outward derivative
    positive, nondegenerate tangential minimum) or case (b) (critical
    boundary saddle); failures of both are recorded as violations.  The
    boundary list is a candidate set: the labeling attaches the actual
    contacts of each well by level and descent adjacency.
    """
    f_range = float(np.max(merge.f_flat) - np.min(merge.f_flat)) or 1.0
    if tol_level is None:
        tol_level = 1e-9 * f_range
    meshes = grid.mesh_widths(domain)
    slack = _mesh_slack(crits, meshes, tol_level)

    mesh_sq = float(np.max(meshes)) ** 2
    side_components = {}
    side_nodes = {}
    side_eps = {}
    interior = []
    for c in crits:
        if c.on_boundary or c.index != 1 or c.grad_norm > 1e-6:
            continue
        vd = c.hess_eigenvectors[:, 0]
        level = c.value
        eps = max(tol_level, 2.0 * abs(c.mu_d) * mesh_sq)
        nm = _descending_seed_node(merge, grid, domain, c.location, -vd, level, meshes, 1.05 * eps)
        np_ = _descending_seed_node(merge, grid, domain, c.location, +vd, level, meshes, 1.05 * eps)
        if nm is None or np_ is None:
            continue
        cm = merge.component_at_level(nm, level, eps)
        cp = merge.component_at_level(np_, level, eps)
        side_components[c.ident] = (cm, cp)
        side_nodes[c.ident] = (nm, np_)
        side_eps[c.ident] = eps
        if cm != cp:
            c.separating = True
            c.saddle_kind = "interior"
            interior.append(c)

    violations = []
    boundary = []
    tol_grad_b = 1e-6 * max(1.0, max((c.grad_norm for c in crits), default=1.0))
    for c in crits:
        if not c.on_boundary:
            continue
        if c.grad_norm <= tol_grad_b:
            # case (b): genuine critical point on the boundary, must be a saddle
            if c.index == 1:
                c.saddle_kind = "boundary_critical"
                boundary.append(c)
            else:
                violations.append((c.ident, f"boundary critical point of index {c.index}"))
        else:
            # case (a): requires outward derivative > 0 and a nondegenerate
            # tangential minimum
            te = c.tangential_eigenvalues
            h_scale = max(1.0, float(np.max(np.abs(c.hess_eigenvalues))))
            tang_ok = te is None or len(te) == 0 or np.all(te > 1e-8 * h_scale)
            if c.normal_derivative is not None and c.normal_derivative > 0.0 and tang_ok:
                c.saddle_kind = "boundary_noncritical"
                boundary.append(c)
            else:
                violations.append(
                    (c.ident, "boundary contact fails both case (a) and case (b)")
                )
    return SaddleSet(
        interior=interior,
        boundary=boundary,
        violations=violations,
        side_components=side_components,
        side_nodes=side_nodes,
        side_eps=side_eps,
        slack=slack,
    )


# ---------------------------------------------------------------------------
# Well labeling (the j and C_j maps)
# ---------------------------------------------------------------------------


@dataclass
class WellLabel:
    minimum: CriticalPoint
    tier: tuple  # (k, ell)
    component_id: int
    cut_level: float
    node_set: np.ndarray
    saddles: list  # CriticalPoint records forming j(x)
    saddle_value: float
    energy: float
    argmin: list  # CriticalPoint minima achieving min f over the component
    principal: bool


@dataclass
class WellLabeling:
    labels: list
    minima: list
    tol_level: float
    slack: float
    merge: MergeStructure = dc_field(repr=False, default=None)

    def by_minimum(self):
        return {id(l.minimum): l for l in self.labels}


def _group_levels(values, tol):
    """Distinct levels (descending), grouping values closer than tol."""
    out = []
    for v in sorted(values, reverse=True):
        if not out or out[-1] - v > tol:
            out.append(v)
    return out


def build_jmap(merge, ssps, minima, tol_level=None, field=None, domain=None, grid=None, tie_break="lex"):
    """Build the well labeling: principal wells first, then the level recursion.

    Tier 1 wells are the maximal sublevel components avoiding the boundary;
    their j sets collect the boundary generalized saddles plus interior
    separating saddles at the contact level.  Deeper tiers peel components of
    ``{f < kappa}`` (kappa running down the interior separating-saddle levels
    inside principal wells) that do not yet contain a labeled minimum.
    Argmin ties break to lexicographically smallest coordinates.  All sublevel
    queries cut a saddle-curvature-scaled width below the level so that the
    saddle's own merge events stay above every cut.
    """
    if not minima:
        raise LabelingError("no interior local minima (U0 is empty)")
    f_range = float(np.max(merge.f_flat) - np.min(merge.f_flat)) or 1.0
    if tol_level is None:
        tol_level = 1e-9 * f_range
    meshes = grid.mesh_widths(domain)
    mesh_sq = float(np.max(meshes)) ** 2
    band = _mesh_slack(minima + ssps.interior + ssps.boundary, meshes, tol_level)

    min_node = {m.ident: _nearest_node(grid, domain, m.location) for m in minima}

    def hess_scale(z):
        return max(1.0, float(np.max(np.abs(z.hess_eigenvalues))))

    def cut_eps(saddles):
        scale = max((hess_scale(z) for z in saddles), default=1.0)
        return max(tol_level, 2.0 * scale * mesh_sq)

    def contact_seed(b, level, eps):
        """Seed node strictly below the cut, descending from contact b."""
        dirs = []
        if b.grad_norm <= 1e-6 * max(1.0, b.grad_norm + 1.0) or b.saddle_kind == "boundary_critical":
            vd = b.hess_eigenvectors[:, 0]
            dirs.extend([-vd, vd])
        dirs.append(-b.normal)
        for direction in dirs:
            node = _descending_seed_node(
                merge, grid, domain, b.location, direction, level, meshes, 1.05 * eps
            )
            if node is not None:
                return node
        return None

    def interior_seeds(z, level, eps):
        vd = z.hess_eigenvectors[:, 0]
        out = []
        for direction in (-vd, vd):
            node = _descending_seed_node(
                merge, grid, domain, z.location, direction, level, meshes, 1.05 * eps
            )
            if node is not None:
                out.append(node)
        return out

    # --- tier 1: principal wells -------------------------------------------
    contact = {}
    for m in minima:
        lvl = merge.contact_level(min_node[m.ident])
        if lvl is None:
            raise LabelingError(f"component of minimum {m.ident} never meets the boundary")
        contact[m.ident] = lvl

    # candidate saddles per well by level proximity; then a consistent cut
    labels = []
    labeled = set()
    principal = []  # (rep_node, lam, eps_w)
    groups = {}
    for m in minima:
        lam = contact[m.ident]
        cand_b = [b for b in ssps.boundary if abs(b.value - lam) <= band]
        cand_i = [z for z in ssps.interior if abs(z.value - lam) <= band]
        eps_w = cut_eps(cand_b + cand_i)
        comp = merge.component_at_level(min_node[m.ident], lam, eps_w)
        groups.setdefault(comp, []).append((m, lam, eps_w, cand_b, cand_i))

    for ell, (comp, members) in enumerate(
        sorted(groups.items(), key=lambda kv: _lex_key([m for m, *_ in kv[1]]))
    ):
        mins = [m for m, *_ in members]
        lam = members[0][1]
        eps_w = members[0][2]
        cand_b, cand_i = members[0][3], members[0][4]
        rep = _argmin_rep(mins, tol_level, tie_break)
        rep_comp = merge.component_at_level(min_node[rep.ident], lam, eps_w)
        sads = []
        for b in cand_b:
            seed = contact_seed(b, lam, eps_w)
            if seed is not None and merge.component_at_level(seed, lam, eps_w) == rep_comp:
                sads.append(b)
        for z in cand_i:
            for seed in interior_seeds(z, lam, eps_w):
                if merge.component_at_level(seed, lam, eps_w) == rep_comp:
                    sads.append(z)
                    break
        if not sads:
            raise LabelingError(
                f"principal well of minimum {rep.ident} has no separating saddle"
            )
        sad_val = float(np.mean([s.value for s in sads]))
        node_set = merge.member_nodes(rep_comp, lam, eps_w)
        argmin = [m for m in mins if m.value <= min(x.value for x in mins) + tol_level]
        labels.append(
            WellLabel(
                minimum=rep,
                tier=(1, ell + 1),
                component_id=rep_comp,
                cut_level=lam,
                node_set=node_set,
                saddles=sads,
                saddle_value=sad_val,
                energy=sad_val - rep.value,
                argmin=argmin,
                principal=True,
            )
        )
        labeled.add(rep.ident)
        principal.append((min_node[rep.ident], lam, eps_w))

    # --- deeper tiers --------------------------------------------------------
    def inside_some_well(z):
        for rep_node, lam, eps_w in principal:
            if z.value >= lam - band:
                continue
            for seed in interior_seeds(z, lam, eps_w):
                if merge.component_at_level(seed, lam, eps_w) == merge.component_at_level(
                    rep_node, lam, eps_w
                ):
                    return True
        return False

    inner = [z for z in ssps.interior if inside_some_well(z)]
    levels = _group_levels([z.value for z in inner], band)
    tier = 1
    for kappa in levels:
        if len(labeled) == len(minima):
            break
        group = [z for z in inner if abs(z.value - kappa) <= band]
        eps_q = cut_eps(group)
        comp_of_min = {}
        for m in minima:
            if m.value < kappa - eps_q:
                comp_of_min[m.ident] = merge.component_at_level(min_node[m.ident], kappa, eps_q)
        comps = {}
        for m in minima:
            if m.ident in comp_of_min:
                comps.setdefault(comp_of_min[m.ident], []).append(m)
        new_labels = []
        for comp, mins in sorted(comps.items(), key=lambda kv: _lex_key(kv[1])):
            if any(m.ident in labeled for m in mins):
                continue
            sads = []
            for z in group:
                for seed in interior_seeds(z, kappa, eps_q):
                    if merge.component_at_level(seed, kappa, eps_q) == comp:
                        sads.append(z)
                        break
            if not sads:
                continue
            rep = _argmin_rep(mins, tol_level, tie_break)
            sad_val = float(np.mean([z.value for z in sads]))
            node_set = merge.member_nodes(comp, kappa, eps_q)
            argmin = [m for m in mins if m.value <= min(x.value for x in mins) + tol_level]
            new_labels.append(
                WellLabel(
                    minimum=rep,
                    tier=None,
                    component_id=comp,
                    cut_level=kappa,
                    node_set=node_set,
                    saddles=sads,
                    saddle_value=sad_val,
                    energy=sad_val - rep.value,
                    argmin=argmin,
                    principal=False,
                )
            )
            labeled.add(rep.ident)
        if new_labels:
            tier += 1
            for ell, lab in enumerate(new_labels):
                lab.tier = (tier, ell + 1)
            labels.extend(new_labels)

    if len(labeled) != len(minima):
        missing = [m.ident for m in minima if m.ident not in labeled]
        raise LabelingError(
            f"minima {missing} remain unlabeled after exhausting separating saddles"
        )
    return WellLabeling(labels=labels, minima=minima, tol_level=tol_level, slack=band, merge=merge)


def _argmin_rep(members, tol, tie_break="lex"):
    """Representative minimum: smallest value within tol, then by coordinates."""
    vmin = min(m.value for m in members)
    cands = [m for m in members if m.value <= vmin + tol]
    if tie_break == "revlex":
        return max(cands, key=lambda m: tuple(m.location))
    return min(cands, key=lambda m: tuple(m.location))


def _lex_key(members, tol=0.0):
    rep = min(members, key=lambda m: (m.value, tuple(m.location)))
    return (rep.value, tuple(rep.location))


# ---------------------------------------------------------------------------
# Hypothesis checks
# ---------------------------------------------------------------------------


@dataclass
class HypothesisReport:
    h1_pass: bool
    h2_pass: bool
    h1_checks: list  # (saddle ident, alignment angle)
    h2_checks: list  # (saddle ident, normal derivative, tangential eigenvalues)
    violations: list  # human-readable strings

    @property
    def passed(self):
        return self.h1_pass and self.h2_pass


def check_hypotheses(labeling, ssps, field, angle_tol=1e-3, tangential_pd_tol=1e-10):
    """Check the two boundary-geometry hypotheses on tier-1 boundary contacts.

    H1: at contacts with vanishing gradient the outward normal must be the
    eigenvector of the negative Hessian eigenvalue (within ``angle_tol``).
    H2: at contacts with nonvanishing gradient the face-restricted Hessian
    must be positive definite and the outward derivative positive.
    Violations are data, not exceptions.
    """
    h1_checks, h2_checks, violations = [], [], []
    seen = set()
    for lab in labeling.labels:
        if not lab.principal:
            continue
        for s in lab.saddles:
            if not s.on_boundary or s.ident in seen:
                continue
            seen.add(s.ident)
            if s.saddle_kind == "boundary_critical" or (
                s.alignment_angle is not None and s.saddle_kind != "boundary_noncritical"
            ):
                angle = s.alignment_angle if s.alignment_angle is not None else np.pi / 2
                h1_checks.append((s.ident, float(angle)))
                if angle > angle_tol:
                    violations.append(
                        f"H1: contact {s.ident} at {s.location} has normal-alignment "
                        f"angle {angle:.6f} > {angle_tol}"
                    )
            else:
                te = s.tangential_eigenvalues
                h2_checks.append(
                    (s.ident, float(s.normal_derivative), None if te is None else te.tolist())
                )
                if s.normal_derivative <= 0.0:
                    violations.append(
                        f"H2: contact {s.ident} has nonpositive outward derivative"
                    )
                if te is not None and len(te) > 0 and np.any(te < tangential_pd_tol):
                    violations.append(
                        f"H2: contact {s.ident} tangential Hessian not positive definite"
                    )
    for ident, reason in ssps.violations:
        violations.append(f"classification: point {ident}: {reason}")
    h1_bad = any(v.startswith("H1") or v.startswith("classification") for v in violations)
    h2_bad = any(v.startswith("H2") or v.startswith("classification") for v in violations)
    return HypothesisReport(
        h1_pass=not h1_bad,
        h2_pass=not h2_bad,
        h1_checks=h1_checks,
        h2_checks=h2_checks,
        violations=violations,
    )


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _cp_dict(c):
    return {
        "id": c.ident,
        "location": [float(x) for x in c.location],
        "value": c.value,
        "index": c.index,
        "on_boundary": c.on_boundary,
        "grad_norm": c.grad_norm,
        "hess_eigenvalues": [float(x) for x in c.hess_eigenvalues],
        "saddle_kind": c.saddle_kind,
        "separating": c.separating,
        "normal_derivative": c.normal_derivative,
        "tangential_eigenvalues": None
        if c.tangential_eigenvalues is None
        else [float(x) for x in c.tangential_eigenvalues],
        "alignment_angle": c.alignment_angle,
    }


def topology_to_json(crits, merge, labeling, report):
    """Stable JSON document for critical points, merges, labeling, hypotheses."""
    doc = {
        "critical_points": [_cp_dict(c) for c in crits],
        "merge_events": [
            {"level": e.level, "witness": int(e.witness), "older": int(e.older), "younger": int(e.younger)}
            for e in merge.events
        ],
        "labeling": [
            {
                "minimum": lab.minimum.ident,
                "tier": list(lab.tier),
                "cut_level": lab.cut_level,
                "saddles": [s.ident for s in lab.saddles],
                "saddle_value": lab.saddle_value,
                "energy": lab.energy,
                "argmin": [m.ident for m in lab.argmin],
                "principal": lab.principal,
                "node_count": int(lab.node_set.size),
            }
            for lab in labeling.labels
        ],
        "hypothesis_report": {
            "h1_pass": report.h1_pass,
            "h2_pass": report.h2_pass,
            "h1_checks": [[i, a] for i, a in report.h1_checks],
            "h2_checks": [[i, d, t] for i, d, t in report.h2_checks],
            "violations": report.violations,
        },
    }
    json.dumps(doc)  # fail fast on anything unserializable
    return doc
