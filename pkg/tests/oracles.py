"""Independent 1-D sublevel-interval oracle for the well-labeling machinery.

Everything here works directly on the analytic potential through root
bracketing and bisection on dense samples -- no grids, no union-find -- so it
can arbitrate the discrete merge/labeling path.  Sublevel sets are always cut
a fixed small fraction of the value range below each level so that the
barrier between components is wide enough for the sampling to see.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import brentq

CUT_FRACTION = 1e-6
SAMPLES = 8001


def critical_points_1d(field, a, b):
    """Interior critical points on (a, b) by sign changes of the derivative."""
    xs = np.linspace(a, b, 20001)
    ds = field.gradient(xs[:, None])[:, 0]
    dfunc = lambda x: float(field.gradient(np.array([x]))[0])
    roots = []
    for i in range(len(xs) - 1):
        if ds[i] == 0.0 and a < xs[i] < b:
            roots.append(float(xs[i]))
        elif ds[i] * ds[i + 1] < 0.0:
            roots.append(brentq(dfunc, xs[i], xs[i + 1], xtol=1e-14))
    dedup = []
    for r in sorted(roots):
        if all(abs(r - q) > 1e-9 * (b - a) for q in dedup):
            dedup.append(r)
    return dedup


def sublevel_interval(field, a, b, x, lam):
    """The connected component of {f < lam} in [a, b] containing x."""
    func = lambda t: float(field.value(np.array([t])))
    if func(x) >= lam:
        return None
    g = lambda t: func(t) - lam

    xs = np.linspace(a, x, SAMPLES)
    vals = field.value(xs[:, None]) - lam
    above = np.where(vals >= 0.0)[0]
    if above.size:
        i = int(above[-1])
        left = xs[i] if vals[i] == 0.0 else brentq(g, xs[i], xs[min(i + 1, SAMPLES - 1)], xtol=1e-14)
    else:
        left = a
    xs = np.linspace(x, b, SAMPLES)
    vals = field.value(xs[:, None]) - lam
    above = np.where(vals >= 0.0)[0]
    if above.size:
        i = int(above[0])
        right = xs[i] if vals[i] == 0.0 else brentq(g, xs[max(i - 1, 0)], xs[i], xtol=1e-14)
    else:
        right = b
    return (float(left), float(right))


def contact_level(field, a, b, x, lam_hi, cut):
    """Smallest lam at which the component of x in {f < lam} meets {a, b}.

    The touch predicate is evaluated at lam - cut so that the component stays
    resolvable; the returned level compensates for the cut.
    """
    func = lambda t: float(field.value(np.array([t])))
    lo, hi = func(x) + cut, lam_hi

    def touches(lam):
        iv = sublevel_interval(field, a, b, x, lam - cut)
        if iv is None:
            return False
        return iv[0] <= a + 1e-9 or iv[1] >= b - 1e-9

    if not touches(hi):
        raise AssertionError("upper bracket does not touch the boundary")
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if touches(mid):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi) - cut  # compensate the resolvability offset


def label_wells_1d(field, a, b):
    """The full labeling recursion on analytic sublevel intervals.

    Returns a list of dicts: representative minimum, energy, saddle locations
    (interior separating points and/or domain endpoints), tier index.
    """
    func = lambda t: float(field.value(np.array([t])))
    d2func = lambda t: float(field.hessian(np.array([t]))[0, 0])
    crits = critical_points_1d(field, a, b)
    minima = sorted([c for c in crits if d2func(c) > 0.0])
    saddles = sorted([c for c in crits if d2func(c) < 0.0])
    if not minima:
        raise AssertionError("fixture has no interior minima")
    scale = max(func(a), func(b)) - min(func(m) for m in minima)
    cut = CUT_FRACTION * scale
    # a cut of depth c moves interval ends by ~sqrt(2c/curvature) near saddles
    eps_adj = 0.005 * (b - a)

    lam_hi = max(func(a), func(b)) + 1.0
    contact = {m: contact_level(field, a, b, m, lam_hi, cut) for m in minima}
    wells = {}
    for m in minima:
        iv = sublevel_interval(field, a, b, m, contact[m] - cut)
        key = (round(iv[0], 4), round(iv[1], 4))
        wells.setdefault(key, []).append(m)

    labels = []
    labeled = set()
    for key, members in sorted(wells.items()):
        lam = contact[members[0]]
        rep = min(members, key=lambda m: (round(func(m), 10), m))
        iv = sublevel_interval(field, a, b, rep, lam - cut)
        sads = []
        for end, bnd in ((iv[0], a), (iv[1], b)):
            if abs(end - bnd) <= eps_adj:
                sads.append(bnd)  # boundary contact
        for sdl in saddles:
            if abs(func(sdl) - lam) <= cut * 10 and (
                abs(sdl - iv[0]) <= eps_adj or abs(sdl - iv[1]) <= eps_adj
            ):
                sads.append(sdl)
        labels.append(
            {
                "minimum": rep,
                "energy": lam - func(rep),
                "saddles": sorted(sads),
                "tier": 1,
                "interval": iv,
            }
        )
        labeled.add(rep)

    inner = [
        s
        for s in saddles
        if any(lab["interval"][0] < s < lab["interval"][1] for lab in labels)
    ]
    levels = []
    for s in sorted(inner, key=func, reverse=True):
        if not levels or levels[-1] - func(s) > cut * 10:
            levels.append(func(s))
    tier = 1
    for kappa in levels:
        if len(labeled) == len(minima):
            break
        group = [s for s in inner if abs(func(s) - kappa) <= cut * 10]
        new = []
        comps = {}
        for m in minima:
            if m in labeled or func(m) >= kappa - cut:
                continue
            iv = sublevel_interval(field, a, b, m, kappa - cut)
            key = (round(iv[0], 4), round(iv[1], 4))
            comps.setdefault(key, []).append((m, iv))
        for key, items in sorted(comps.items()):
            members = [m for m, _ in items]
            iv = items[0][1]
            if any(iv[0] < m < iv[1] for m in labeled):
                continue
            sads = [s for s in group if abs(s - iv[0]) <= eps_adj or abs(s - iv[1]) <= eps_adj]
            if not sads:
                continue
            rep = min(members, key=lambda m: (round(func(m), 10), m))
            new.append(
                {
                    "minimum": rep,
                    "energy": kappa - func(rep),
                    "saddles": sorted(sads),
                    "tier": None,
                    "interval": iv,
                }
            )
            labeled.add(rep)
        if new:
            tier += 1
            for lab in new:
                lab["tier"] = tier
            labels.extend(new)
    assert len(labeled) == len(minima), "oracle failed to label all minima"
    return labels
