import math

import numpy as np
import pytest

from wittenlab.field import DomainSpec, GridSpec, parse_field, evaluate_on_grid
from wittenlab import spectrum


def _assemble(src, lo, hi, shape, h, d=1):
    f = parse_field(src, d)
    dom = DomainSpec(lower=lo, upper=hi)
    return f, dom, GridSpec(shape=shape), spectrum.assemble(
        f, dom, GridSpec(shape=shape), h
    )


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------


def test_free_laplacian_eigenvalue():
    # f == 0: pure Dirichlet Laplacian, lambda_1 = h^2 pi^2 / L^2
    _, _, _, op = _assemble("0*x1", (-1.0,), (1.0,), (257,), 1.0)
    res = spectrum.smallest_eigenpairs(op, 3, method="dense")
    assert res.eigenvalues[0] == pytest.approx(math.pi**2 / 4.0, rel=1e-2)


def test_stencil_row_double_well():
    f, dom, grid, op = _assemble("(x1^2-1)^2", (-1.7,), (1.7,), (4097,), 0.3)
    x = grid.axes(dom)[0]
    i = int(np.argmin(np.abs(x[1:-1])))  # interior index of the node at x = 0
    dx = grid.mesh_widths(dom)[0]
    diag, off = op.tridiagonal
    # diagonal carries |grad f|^2 = 0 and the +1.2 first-order term
    assert diag[i] - 2 * 0.3**2 / dx**2 == pytest.approx(1.2, abs=1e-10)
    assert off[i] == pytest.approx(-(0.3**2) / dx**2)


def test_symmetry_certificate_exact():
    for src, lo, hi, shape, d in [
        ("(x1^2-1)^2", (-1.7,), (1.7,), (257,), 1),
        ("(x1^2-1)^2 + x2^2", (-1.7, -1.0), (0.0, 1.0), (65, 33), 2),
    ]:
        _, _, _, op = _assemble(src, lo, hi, shape, 0.3, d)
        assert op.symmetry_certificate() == 0.0


def test_self_adjointness_random_vectors(rng):
    _, _, _, op = _assemble("(x1^2-1)^2", (-1.7,), (1.7,), (257,), 0.25)
    A = op.to_scipy()
    for _ in range(20):
        u = rng.standard_normal(op.n)
        v = rng.standard_normal(op.n)
        left, right = float(u @ (A @ v)), float(v @ (A @ u))
        assert abs(left - right) <= 1e-12 * max(abs(left), 1.0)


def test_positivity_random_rayleigh(rng):
    _, _, _, op = _assemble("(x1^2-1)^2", (-1.7,), (1.7,), (513,), 0.25)
    norm = op.norm_inf()
    for _ in range(50):
        u = rng.standard_normal(op.n)
        assert op.rayleigh(u) >= -1e-12 * norm


def test_assembly_guards():
    f = parse_field("x1^2", 1)
    dom = DomainSpec(lower=(-1.0,), upper=(1.0,))
    with pytest.raises(spectrum.SpectrumError):
        spectrum.assemble(f, dom, GridSpec(shape=(17,)), 0.3)
    with pytest.raises(spectrum.SpectrumError):
        spectrum.assemble(f, dom, GridSpec(shape=(65,)), -0.1)


# ---------------------------------------------------------------------------
# Eigensolvers
# ---------------------------------------------------------------------------


def test_double_well_cluster_and_gap():
    _, _, _, op = _assemble("(x1^2-1)^2", (-1.7,), (1.7,), (2049,), 0.25)
    res = spectrum.smallest_eigenpairs(op, 4, method="dense")
    assert np.sum(res.eigenvalues < 1e-3) == 2
    assert res.eigenvalues[2] / res.eigenvalues[1] > 5e3
    cl = spectrum.count_small_cluster(res, 0.25)
    assert cl.count == 2 and cl.clear


def test_cluster_counts_across_h():
    for h in (0.2, 0.25, 0.3):
        _, _, _, op = _assemble("(x1^2-1)^2", (-1.7,), (1.7,), (1025,), h)
        res = spectrum.smallest_eigenpairs(op, 4, method="dense")
        assert spectrum.count_small_cluster(res, h).count == 2
    _, _, _, op = _assemble("x1^2", (-1.0,), (1.0,), (513,), 0.25)
    res = spectrum.smallest_eigenpairs(op, 3, method="dense")
    assert spectrum.count_small_cluster(res, 0.25).count == 1
    _, _, _, op = _assemble("(x1^2-1)^2", (-1.7,), (0.0,), (1025,), 0.25)
    res = spectrum.smallest_eigenpairs(op, 3, method="dense")
    cl = spectrum.count_small_cluster(res, 0.25)
    assert cl.count == 1 and cl.gap_ratio > 5e3


def test_dense_vs_shift_invert_agreement():
    # fixture whose small eigenvalue sits well above every floor
    _, _, _, op = _assemble("(x1^2-1)^2", (-1.7,), (0.0,), (2049,), 0.25)
    dense = spectrum.smallest_eigenpairs(op, 3, method="dense", refine=False)
    lanc = spectrum.smallest_eigenpairs(op, 3, tol=1e-11, method="shift_invert_lanczos", seed=3)
    norm = op.norm_inf()
    for a, b in zip(dense.eigenvalues, lanc.eigenvalues):
        if a > 1e-13 * norm:
            assert abs(a / b - 1.0) <= 1e-8


def test_dense_vs_shift_invert_agreement_2d():
    _, _, _, op = _assemble(
        "(x1^2-1)^2 + x2^2", (-1.7, -1.0), (0.0, 1.0), (65, 49), 0.35, d=2
    )
    dense = spectrum.smallest_eigenpairs(op, 3, method="dense", refine=False)
    lanc = spectrum.smallest_eigenpairs(op, 3, tol=1e-11, method="shift_invert_lanczos", seed=5)
    for a, b in zip(dense.eigenvalues, lanc.eigenvalues):
        assert abs(a / b - 1.0) <= 1e-8


def test_residuals_certified():
    _, _, _, op = _assemble("(x1^2-1)^2", (-1.7,), (0.0,), (1025,), 0.25)
    res = spectrum.smallest_eigenpairs(op, 3, method="dense")
    assert np.all(res.residuals <= 1e-10 * op.norm_inf())


def test_refinement_reproduces_known_tiny_eigenvalue():
    # the conjugated-pencil refinement agrees with the solver where both work
    _, _, _, op = _assemble("(x1^2-1)^2", (-1.7,), (0.0,), (1025,), 0.3)
    plain = spectrum.smallest_eigenpairs(op, 3, method="dense", refine=False)
    w_edge, Md = op.weighted
    val, width = spectrum._generalized_sturm_refine(w_edge, Md, 0, float(plain.eigenvalues[1]) * 0.9)
    # both discretizations agree to their common order
    assert val == pytest.approx(float(plain.eigenvalues[0]), rel=2e-2)
    assert width <= 1e-9 * val


def test_refined_below_mesh_floor_monotone():
    # deep-branch values must decrease like exp(-2E/h) across the sweep
    f = parse_field("(x1^2-1)^2", 1)
    dom = DomainSpec(lower=(-1.7,), upper=(1.7,))
    grid = GridSpec(shape=(2049,))
    vals = []
    for h in (0.3, 0.25, 0.2):
        op = spectrum.assemble(f, dom, grid, h)
        res = spectrum.smallest_eigenpairs(op, 4, method="dense")
        assert res.refined[0]
        assert res.eigenvalues[0] > 0
        vals.append(res.eigenvalues[0])
    assert vals[0] > vals[1] > vals[2]


def test_mesh_convergence_second_order():
    f = parse_field("(x1^2-1)^2", 1)
    dom = DomainSpec(lower=(-1.7,), upper=(0.0,))
    lam = []
    for n in (257, 513, 1025):
        op = spectrum.assemble(f, dom, GridSpec(shape=(n,)), 0.3)
        res = spectrum.smallest_eigenpairs(op, 2, method="dense", refine=False)
        lam.append(res.eigenvalues[0])
    d1 = abs(lam[0] - lam[1])
    d2 = abs(lam[1] - lam[2])
    assert 3.0 <= d1 / d2 <= 5.0


def test_ground_state_single_sign():
    for src, lo, hi in [("(x1^2-1)^2", (-1.7,), (1.7,)), ("(x1^2-1)^2", (-1.7,), (0.0,))]:
        _, _, _, op = _assemble(src, lo, hi, (513,), 0.3)
        res = spectrum.smallest_eigenpairs(op, 2, method="dense")
        v = res.eigenvectors[:, 0]
        big = np.abs(v) > 1e-13 * np.max(np.abs(v))
        signs = np.sign(v[big])
        assert np.all(signs == signs[0])


def test_conjugation_identity_second_order():
    # A(e^{-f/h} w) = h e^{-f/h} (h L_H + 2 grad f . grad) w at discretization order
    f = parse_field("(x1^2-1)^2", 1)
    dom = DomainSpec(lower=(-1.7,), upper=(1.7,))
    h = 0.5
    resids = []
    for n in (129, 257, 513):
        grid = GridSpec(shape=(n,))
        gf = evaluate_on_grid(f, dom, grid)
        x = grid.axes(dom)[0]
        w = np.sin(math.pi * (x + 1.7) / 3.4) + 0.3 * np.sin(2 * math.pi * (x + 1.7) / 3.4)
        u = np.exp(-gf.f / h) * w
        op = spectrum.assemble(f, dom, grid, h)
        lhs = op.matvec(u[1:-1])
        rhs = (h * np.exp(-gf.f / h) * spectrum.weighted_laplacian_apply(f, dom, grid, h, w))[1:-1]
        resids.append(np.max(np.abs(lhs - rhs)) / np.max(np.abs(rhs)))
    assert 3.0 <= resids[0] / resids[1] <= 5.2
    assert 3.0 <= resids[1] / resids[2] <= 5.2


def test_nonnegativity_guard():
    _, _, _, op = _assemble("(x1^2-1)^2", (-1.7,), (1.7,), (1025,), 0.25)
    res = spectrum.smallest_eigenpairs(op, 4, method="dense")
    assert np.all(res.eigenvalues >= -1e-12 * op.norm_inf())


def test_vector_file_roundtrip(tmp_path):
    rng = np.random.default_rng(5)
    V = rng.standard_normal((37, 3))
    path = tmp_path / "vecs.bin"
    spectrum.write_vector_file(path, V, magic=b"WKEV")
    back = spectrum.read_vector_file(path, magic=b"WKEV")
    assert np.array_equal(V, back)
    raw = path.read_bytes()
    assert raw[:4] == b"WKEV"
    assert int.from_bytes(raw[4:8], "little") == 37
    assert int.from_bytes(raw[8:12], "little") == 3
    with pytest.raises(spectrum.SpectrumError):
        spectrum.read_vector_file(path, magic=b"WKQM")


def test_k_out_of_range():
    _, _, _, op = _assemble("x1^2", (-1.0,), (1.0,), (33,), 0.3)
    with pytest.raises(spectrum.SpectrumError):
        spectrum.smallest_eigenpairs(op, op.n, method="dense")
