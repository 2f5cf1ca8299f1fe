"""Configuration, pipeline orchestration, rate regression and reports.

``wk run --config cfg.json`` executes topology -> predictions -> h-sweep
solve -> validation and writes ``report.json``, ``spectrum.csv`` and
``rates.csv`` into the output directory.  ``wk check`` stops after the
topology and hypothesis stage.  Exit codes: 0 success, 2 hypothesis
violation, 3 numeric failure, 4 configuration error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from . import field as field_mod
from . import kramers, quasimode, spectrum, topology

__all__ = [
    "ConfigError",
    "PipelineError",
    "HypothesisFailure",
    "RunConfig",
    "RunReport",
    "load_config",
    "run_pipeline",
    "fit_rates",
    "write_outputs",
    "main",
]


class ConfigError(Exception):
    pass


class PipelineError(Exception):
    pass


class HypothesisFailure(PipelineError):
    def __init__(self, message, report):
        super().__init__(message)
        self.report = report


class FitError(PipelineError):
    pass


@dataclass
class RunConfig:
    potential: str
    dimension: int
    lower: tuple
    upper: tuple
    grid: tuple
    h_values: tuple
    eigenvalue_count: int
    solver_method: str = "dense"
    solver_tolerance: float = 1e-10
    quasimode_diagnostics: bool = False
    principal_formula_check: bool = True
    dump_vectors: bool = False
    output_dir: str | None = None
    seed: int = 0

    @property
    def domain(self):
        return field_mod.DomainSpec(lower=self.lower, upper=self.upper)

    @property
    def grid_spec(self):
        return field_mod.GridSpec(shape=self.grid)


def load_config(data):
    """Validate a parsed JSON document into a RunConfig."""
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    if data.get("schema") != 1:
        raise ConfigError("config schema must be 1")
    try:
        dim = int(data["dimension"])
        if dim not in (1, 2):
            raise ConfigError("dimension must be 1 or 2")
        domain = data["domain"]
        lower = tuple(float(x) for x in domain["lower"])
        upper = tuple(float(x) for x in domain["upper"])
        if len(lower) != dim or len(upper) != dim:
            raise ConfigError("domain corners must match the dimension")
        grid = tuple(int(n) for n in data["grid"])
        if len(grid) != dim:
            raise ConfigError("grid sizes must match the dimension")
        if any(n < 33 for n in grid):
            raise ConfigError("grid sizes must be at least 33 per axis")
        h_values = tuple(float(h) for h in data["h_values"])
        if not h_values or any(h <= 0 for h in h_values):
            raise ConfigError("h values must be positive")
        if list(h_values) != sorted(h_values, reverse=True):
            raise ConfigError("h values must be descending")
        k = int(data["eigenvalue_count"])
        solver = data.get("solver", {})
        method = solver.get("method", "dense")
        if method not in ("dense", "shift_invert_lanczos"):
            raise ConfigError(f"unknown solver method {method!r}")
        cfg = RunConfig(
            potential=str(data["potential"]),
            dimension=dim,
            lower=lower,
            upper=upper,
            grid=grid,
            h_values=h_values,
            eigenvalue_count=k,
            solver_method=method,
            solver_tolerance=float(solver.get("tolerance", 1e-10)),
            quasimode_diagnostics=bool(data.get("quasimode_diagnostics", False)),
            principal_formula_check=bool(data.get("principal_formula_check", True)),
            dump_vectors=bool(data.get("dump_vectors", False)),
            output_dir=data.get("output_dir"),
            seed=int(data.get("seed", 0)),
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as err:
        raise ConfigError(f"invalid config: {err!r}") from err
    return cfg


@dataclass
class RunReport:
    config: dict
    topology: dict | None = None
    hypothesis_passed: bool | None = None
    predictions: list = dc_field(default_factory=list)
    principal_formula: dict | None = None
    spectra: list = dc_field(default_factory=list)
    ratio_rows: list = dc_field(default_factory=list)
    rate_rows: list = dc_field(default_factory=list)
    quasimode: list = dc_field(default_factory=list)
    vector_dumps: list = dc_field(default_factory=list)
    status: str = "ok"
    predictions_obj: object = None
    principal_formula_obj: object = None

    def to_json_dict(self):
        return {
            "schema": 1,
            "status": self.status,
            "config": self.config,
            "topology": self.topology,
            "hypothesis_passed": self.hypothesis_passed,
            "predictions": self.predictions,
            "principal_formula": self.principal_formula,
            "spectra": self.spectra,
            "ratios": self.ratio_rows,
            "rates": self.rate_rows,
            "quasimode": self.quasimode,
            "vector_dumps": self.vector_dumps,
        }


def fit_rates(points, reliable=None):
    """Least-squares fit of log lambda = log A + gamma log h - 2E/h.

    ``points`` is a list of (h, lambda); entries flagged unreliable (solver
    floor) are excluded up front.  Requires at least 4 usable points and a
    full-rank design.
    """
    pts = [
        (h, lam)
        for i, (h, lam) in enumerate(points)
        if (reliable is None or reliable[i]) and lam > 0.0
    ]
    if len(pts) < 4:
        raise FitError(f"only {len(pts)} usable points on the branch (need 4)")
    hs = np.array([p[0] for p in pts])
    lam = np.array([p[1] for p in pts])
    design = np.column_stack([np.ones_like(hs), np.log(hs), 1.0 / hs])
    if np.linalg.matrix_rank(design) < 3:
        raise FitError("rank-deficient design (h list too short or clustered)")
    target = np.log(lam)
    coef, *_ = np.linalg.lstsq(design, target, rcond=None)
    resid = target - design @ coef
    rms = float(np.sqrt(np.mean(resid**2)))
    log_a, gamma, c = (float(v) for v in coef)
    return {
        "E_fit": -c / 2.0,
        "gamma_fit": gamma,
        "prefactor_fit": math.exp(log_a),
        "rms_log_misfit": rms,
        "n_points": len(pts),
    }


STAGES = ("topology", "predict", "solve", "validate")


def run_pipeline(config, check_only=False, stages=STAGES):
    """Execute the staged pipeline; deterministic for a fixed config.

    ``stages`` must be a prefix-closed subset of topology -> predict ->
    solve -> validate; later stages silently require the earlier ones.
    """
    stages = tuple(stages)
    for st in stages:
        if st not in STAGES:
            raise ConfigError(f"unknown stage {st!r}")
    want = {st: st in stages for st in STAGES}
    fld = field_mod.parse_field(config.potential, config.dimension)
    domain = config.domain
    grid = config.grid_spec
    report = RunReport(config=_config_dict(config))

    crits = topology.find_critical_points(fld, domain, grid)
    minima = [c for c in crits if not c.on_boundary and c.index == 0]
    merge = topology.build_merge_structure(fld, domain, grid)
    ssps = topology.separating_saddles(merge, crits, fld, domain, grid)
    labeling = topology.build_jmap(merge, ssps, minima, field=fld, domain=domain, grid=grid)
    hypo = topology.check_hypotheses(labeling, ssps, fld)
    report.topology = topology.topology_to_json(crits, merge, labeling, hypo)
    report.hypothesis_passed = hypo.passed
    if not hypo.passed:
        report.status = "hypothesis_violation"
        raise HypothesisFailure(
            "hypothesis check failed: " + "; ".join(hypo.violations), report
        )
    if check_only or not want["predict"]:
        return report

    m0 = len(minima)
    if config.eigenvalue_count < m0 + 2:
        raise ConfigError(
            f"eigenvalue_count {config.eigenvalue_count} < m0 + 2 = {m0 + 2}"
        )

    preds = kramers.build_prediction(labeling, crits)
    report.predictions = [_prediction_dict(p) for p in preds.predictions]
    report.predictions_obj = preds
    if config.principal_formula_check:
        cor = kramers.principal_eigenvalue_formula(fld, domain, labeling)
        report.principal_formula = {
            "applicable": cor.applicable,
            "reasons": cor.reasons,
            "prefactor": cor.prefactor,
            "energy": cor.energy,
        }
        report.principal_formula_obj = cor

    if not want["solve"]:
        return report

    branch_points = {j: [] for j in range(len(preds.predictions))}
    branch_reliable = {j: [] for j in range(len(preds.predictions))}
    for h in config.h_values:
        op = spectrum.assemble(fld, domain, grid, h)
        res = spectrum.smallest_eigenpairs(
            op,
            config.eigenvalue_count,
            tol=config.solver_tolerance,
            method=config.solver_method,
            seed=config.seed,
        )
        cluster = spectrum.count_small_cluster(res, h)
        if config.dump_vectors and res.eigenvectors is not None and config.output_dir:
            outdir = Path(config.output_dir)
            outdir.mkdir(parents=True, exist_ok=True)
            path = outdir / f"eigenvectors_h{h:g}.wkev"
            spectrum.write_vector_file(path, res.eigenvectors, magic=b"WKEV")
            report.vector_dumps.append(str(path))
        spec_row = {
            "h": h,
            "eigenvalues": [float(v) for v in res.eigenvalues],
            "residuals": [float(r) for r in res.residuals],
            "cluster_count": cluster.count,
            "gap_ratio": cluster.gap_ratio,
            "cluster_clear": cluster.clear,
            "method": res.method,
            "refined": res.refined.tolist(),
            "below_floor": res.below_floor.tolist(),
        }
        report.spectra.append(spec_row)
        for j, pred in enumerate(preds.predictions):
            if j >= len(res.eigenvalues) or not want["validate"]:
                continue
            lam = float(res.eigenvalues[j])
            predicted = float(pred.evaluate(h))
            usable = bool(not res.below_floor[j])
            branch_points[j].append((h, lam))
            branch_reliable[j].append(usable)
            report.ratio_rows.append(
                {
                    "h": h,
                    "j": j + 1,
                    "lambda_numeric": lam,
                    "lambda_predicted": predicted,
                    "ratio": lam / predicted if predicted > 0 else float("nan"),
                    "residual": float(res.residuals[j]),
                }
            )
        if config.quasimode_diagnostics and want["validate"]:
            fam = quasimode.build_quasimode_family(labeling, fld, domain, grid, h)
            if config.dump_vectors and config.output_dir:
                interior = ~np.asarray(grid.boundary_mask()).reshape(-1)
                qvecs = np.column_stack([qm.psi[interior] for qm in fam.modes])
                path = Path(config.output_dir) / f"quasimodes_h{h:g}.wkqm"
                spectrum.write_vector_file(path, qvecs, magic=b"WKQM")
                report.vector_dumps.append(str(path))
            order = [p.minimum_id for p in preds.predictions]
            mats = quasimode.interaction_matrix(fam, order=order)
            proj = quasimode.projector_diagnostics(fam, mats, res, cluster.count, grid, op)
            report.quasimode.append(
                {
                    "h": h,
                    "energies": mats.energies.tolist(),
                    "singular_values": mats.singular_values.tolist(),
                    "structural_zero_count": int(np.sum(mats.S == 0.0)),
                    "projector_skipped": proj.skipped,
                    "gram_condition": proj.gram_condition,
                    "singular_match": proj.singular_match,
                }
            )

    if not want["validate"]:
        return report
    for j, pred in enumerate(preds.predictions):
        row = {
            "branch": j + 1,
            "E_pred": pred.energy,
            "gamma_pred": pred.gamma,
        }
        try:
            fit = fit_rates(branch_points[j], branch_reliable[j])
            row.update(
                {
                    "E_fit": fit["E_fit"],
                    "gamma_fit": fit["gamma_fit"],
                    "prefactor_fit": fit["prefactor_fit"],
                    "rms_log_misfit": fit["rms_log_misfit"],
                }
            )
        except FitError as err:
            row.update(
                {
                    "E_fit": None,
                    "gamma_fit": None,
                    "prefactor_fit": None,
                    "rms_log_misfit": None,
                    "error": str(err),
                }
            )
        report.rate_rows.append(row)
    return report


def _config_dict(config):
    return {
        "potential": config.potential,
        "dimension": config.dimension,
        "domain": {"lower": list(config.lower), "upper": list(config.upper)},
        "grid": list(config.grid),
        "h_values": list(config.h_values),
        "eigenvalue_count": config.eigenvalue_count,
        "solver": {"method": config.solver_method, "tolerance": config.solver_tolerance},
        "quasimode_diagnostics": config.quasimode_diagnostics,
        "principal_formula_check": config.principal_formula_check,
        "dump_vectors": config.dump_vectors,
        "seed": config.seed,
    }


def _prediction_dict(p):
    return {
        "minimum": p.minimum_id,
        "location": [float(x) for x in p.location],
        "E": p.energy,
        "gamma": p.gamma,
        "K1": p.K1,
        "K2": p.K2,
        "A1": p.A1,
        "A2": p.A2,
        "B": p.B,
        "error_order": p.error_order,
    }


def write_outputs(report, outdir, preds=None):
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    doc = report.to_json_dict()
    if preds is not None:
        doc["m_star"] = preds.m_star
        doc["cross_terms"] = [
            {"x": c.id_x, "y": c.id_y, "K": c.K, "shared": list(c.shared_saddles)}
            for c in preds.cross_terms
        ]
    with open(outdir / "report.json", "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")
    with open(outdir / "spectrum.csv", "w") as fh:
        fh.write("h,j,lambda_numeric,lambda_predicted,ratio,residual\n")
        for r in report.ratio_rows:
            fh.write(
                f"{r['h']!r},{r['j']},{r['lambda_numeric']!r},"
                f"{r['lambda_predicted']!r},{r['ratio']!r},{r['residual']!r}\n"
            )
    with open(outdir / "rates.csv", "w") as fh:
        fh.write("branch,E_pred,E_fit,gamma_pred,gamma_fit,prefactor_fit,rms_log_misfit\n")
        for r in report.rate_rows:
            fh.write(
                f"{r['branch']},{r['E_pred']!r},{r.get('E_fit')!r},{r['gamma_pred']!r},"
                f"{r.get('gamma_fit')!r},{r.get('prefactor_fit')!r},"
                f"{r.get('rms_log_misfit')!r}\n"
            )


def main(argv=None):
    parser = argparse.ArgumentParser(prog="wk", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="full pipeline")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", default=None)
    p_run.add_argument("--stages", default="topology,predict,solve,validate")
    p_check = sub.add_parser("check", help="topology and hypotheses only")
    p_check.add_argument("--config", required=True)
    args = parser.parse_args(argv)

    try:
        with open(args.config) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return 4
    try:
        config = load_config(data)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 4

    check_only = args.command == "check"
    stages = STAGES
    if args.command == "run":
        stages = tuple(x.strip() for x in args.stages.split(",") if x.strip())
    try:
        report = run_pipeline(config, check_only=check_only, stages=stages)
    except HypothesisFailure as err:
        report = err.report
        outdir = getattr(args, "out", None) or config.output_dir
        if outdir:
            write_outputs(report, outdir)
        print(f"hypothesis violation: {err}", file=sys.stderr)
        return 2
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 4
    except (
        topology.TopologyError,
        spectrum.SpectrumError,
        kramers.KramersError,
        quasimode.QuasimodeError,
        field_mod.FieldError,
        PipelineError,
    ) as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return 3

    outdir = getattr(args, "out", None) or config.output_dir
    if outdir and not check_only:
        write_outputs(report, outdir, getattr(report, "predictions_obj", None))
    if check_only:
        print("ok: topology built, boundary hypotheses passed")
    else:
        print(f"ok: {len(report.predictions)} prediction(s), {len(report.spectra)} h value(s)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
