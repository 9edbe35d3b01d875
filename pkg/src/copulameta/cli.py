"""Command-line surface: ingest study tables, fit model grids, emit curves and reports.

Input CSV schema: header ``study,TP,FN,FP,TN``, one row per study with
nonnegative integer counts; y1 = TP, n1 = TP + FN, y2 = TN, n2 = TN + FP.

Exit codes: 0 success, 1 validation error, 2 convergence failure,
3 internal numeric error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .copulas import CopulaSpec, tau_to_theta
from .errors import (
    ConvergenceError,
    CopulaMetaError,
    DatasetParseError,
    DatasetValidationError,
    DomainError,
    LikelihoodEvaluationError,
    NumericOverflowError,
)
from .estimation import FitOptions, FitResult, fit
from .inference import DEFAULT_LEVELS, DEFAULT_QUANTILES, build_curve_set, vuong_test
from .likelihood import ModelSpec
from .margins import MarginSpec, StudyRecord
from .quadrature import DEFAULT_NQ, gauss_legendre
from .simulation import SimConfig, model_label, run_sim_study
from .asymptotics import limiting_khs, limiting_mle, model_probabilities

__all__ = ["Dataset", "ingest", "emit", "main"]

COPULA_NAMES = ("bvn", "frank", "clayton0", "clayton90", "clayton180", "clayton270")
MARGIN_NAMES = ("normal", "beta")


@dataclass
class Dataset:
    name: str
    studies: list[StudyRecord]
    source: str


def _copula_from_name(name: str, theta: float) -> CopulaSpec:
    if name == "bvn":
        return CopulaSpec("bvn", theta)
    if name == "frank":
        return CopulaSpec("frank", theta)
    if name.startswith("clayton"):
        return CopulaSpec("clayton", theta, int(name[len("clayton"):]))
    raise DomainError(f"unknown copula name {name!r}; choose from {COPULA_NAMES}")


def ingest(path: str) -> Dataset:
    """Read a study table; row order defines study order."""
    studies = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetParseError(f"{path}: empty file") from None
        if [h.strip().lower() for h in header] != ["study", "tp", "fn", "fp", "tn"]:
            raise DatasetParseError(
                f"{path}:1: expected header 'study,TP,FN,FP,TN', got {','.join(header)!r}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 5:
                raise DatasetParseError(f"{path}:{lineno}: expected 5 fields, got {len(row)}")
            try:
                tp, fn, fp, tn = (int(c) for c in row[1:])
            except ValueError:
                raise DatasetParseError(
                    f"{path}:{lineno}: counts must be integers, got {row[1:]}"
                ) from None
            if min(tp, fn, fp, tn) < 0:
                raise DatasetValidationError(f"{path}:{lineno}: negative count")
            if tp + fn == 0 or tn + fp == 0:
                raise DatasetValidationError(f"{path}:{lineno}: empty study arm")
            studies.append(StudyRecord(y1=tp, n1=tp + fn, y2=tn, n2=tn + fp))
    if not studies:
        raise DatasetValidationError(f"{path}: no study rows")
    return Dataset(name=os.path.splitext(os.path.basename(path))[0], studies=studies, source=path)


def emit(dataset: Dataset, path: str) -> None:
    """Write a dataset back in the ingest schema (ingest(emit(d)) == d)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["study", "TP", "FN", "FP", "TN"])
    for i, s in enumerate(dataset.studies, start=1):
        writer.writerow([f"s{i}", s.y1, s.n1 - s.y1, s.n2 - s.y2, s.y2])
    _write_atomic(path, buf.getvalue())


def _write_atomic(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _g(v) -> str:
    if v is None:
        return ""
    v = float(v)
    return "" if not np.isfinite(v) else format(v, ".6g")


def _points_csv(points: np.ndarray, header: tuple[str, str]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in points:
        writer.writerow([_g(row[0]), _g(row[1])])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# fit command
# ---------------------------------------------------------------------------


def _grid_templates(args) -> list[ModelSpec]:
    margins = [m.strip() for m in args.margins.split(",") if m.strip()]
    copulas = [c.strip() for c in args.copulas.split(",") if c.strip()]
    for m in margins:
        if m not in MARGIN_NAMES:
            raise DomainError(f"unknown margin {m!r}; choose from {MARGIN_NAMES}")
    templates = []
    for m in margins:
        scale = 1.0 if m == "normal" else 0.1
        for c in copulas:
            templates.append(
                ModelSpec(
                    MarginSpec(m, 0.5, scale),
                    MarginSpec(m, 0.5, scale),
                    _copula_from_name(c, 0.5 if c in ("bvn", "frank") else 1.0),
                )
            )
    if args.with_khs:
        for c in copulas:
            templates.append(
                ModelSpec(
                    MarginSpec("beta", 0.5, 0.1),
                    MarginSpec("beta", 0.5, 0.1),
                    _copula_from_name(c, 0.5 if c in ("bvn", "frank") else 1.0),
                    variant="khs",
                )
            )
    if args.with_sarmanov:
        templates.append(
            ModelSpec(MarginSpec("beta", 0.5, 0.1), MarginSpec("beta", 0.5, 0.1), None, "sarmanov")
        )
    return templates


_BASELINE = ModelSpec(MarginSpec("normal", 0.5, 1.0), MarginSpec("normal", 0.5, 1.0), CopulaSpec("bvn", 0.5))


def _fit_row(res: FitResult, baseline: FitResult | None) -> dict:
    variant, margin, copula = model_label(res.model)
    se = res.se if res.se is not None else [None] * 5
    row = {
        "variant": variant,
        "margin": margin,
        "copula": copula,
        "pi1": res.estimates[0],
        "se_pi1": se[0],
        "pi2": res.estimates[1],
        "se_pi2": se[1],
        "scale1": res.estimates[2],
        "se_scale1": se[2],
        "scale2": res.estimates[3],
        "se_scale2": se[3],
        "theta": res.estimates[4],
        "se_theta": se[4],
        "tau": res.tau_hat,
        "se_tau": res.tau_se,
        "loglik": res.loglik.total,
        "converged": res.converged,
        "boundary": res.boundary,
        "vuong_stat": None,
        "vuong_p": None,
    }
    is_baseline = variant == "ml" and margin == "normal" and copula == "bvn"
    if baseline is not None and not is_baseline:
        try:
            v = vuong_test(baseline.loglik, res.loglik)
            row["vuong_stat"] = v.statistic
            row["vuong_p"] = v.p_value
        except CopulaMetaError:
            pass
    return row


_FIT_FIELDS = (
    "variant", "margin", "copula", "pi1", "se_pi1", "pi2", "se_pi2",
    "scale1", "se_scale1", "scale2", "se_scale2", "theta", "se_theta",
    "tau", "se_tau", "loglik", "vuong_stat", "vuong_p", "converged", "boundary",
)


def cmd_fit(args) -> int:
    dataset = ingest(args.data)
    templates = _grid_templates(args)
    options = FitOptions(nq=args.nq)

    def run(template):
        try:
            return fit(dataset.studies, template, options)
        except CopulaMetaError as exc:
            return exc

    baseline_template = _BASELINE
    have_baseline = any(
        t.variant == "copula_mixed"
        and t.margin1.kind == "normal"
        and t.copula is not None
        and t.copula.family == "bvn"
        for t in templates
    )
    all_templates = templates if have_baseline else [baseline_template] + templates
    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(run, all_templates))
    else:
        results = [run(t) for t in all_templates]

    baseline = None
    for template, res in zip(all_templates, results):
        if isinstance(res, FitResult) and res.model.variant == "copula_mixed":
            variant, margin, copula = model_label(res.model)
            if margin == "normal" and copula == "bvn":
                baseline = res
                break

    # report only the requested grid; a baseline fitted solely for the Vuong
    # comparison stays out of the table
    rows, failures = [], []
    for template, res in zip(all_templates, results):
        if not have_baseline and template is baseline_template:
            continue
        if isinstance(res, Exception):
            variant, margin, copula = model_label(template)
            failures.append(f"{variant}-{margin}-{copula}: {res}")
            continue
        rows.append(_fit_row(res, baseline))

    if not rows:
        for f in failures:
            print(f"fit failed: {f}", file=sys.stderr)
        return 2

    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=_FIT_FIELDS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        out = {k: row[k] for k in _FIT_FIELDS}
        for k, v in out.items():
            if isinstance(v, bool):
                out[k] = str(v).lower()
            elif isinstance(v, float) or v is None:
                out[k] = _g(v)
        writer.writerow(out)
    csv_text = buf.getvalue()
    _write_atomic(os.path.join(args.out, "fit_report.csv"), csv_text)
    json_rows = [
        {k: (row[k] if not isinstance(row[k], float) or np.isfinite(row[k]) else None) for k in _FIT_FIELDS}
        for row in rows
    ]
    _write_atomic(
        os.path.join(args.out, "fit_report.json"),
        json.dumps({"dataset": dataset.name, "n_studies": len(dataset.studies), "models": json_rows}, indent=2)
        + "\n",
    )

    header = f"{'model':28s} {'pi1':>8s} {'pi2':>8s} {'tau':>8s} {'loglik':>10s} {'vuong_p':>8s} flags"
    print(header)
    for row in rows:
        label = f"{row['variant']}-{row['margin']}-{row['copula']}"
        flags = ("boundary " if row["boundary"] else "") + ("" if row["converged"] else "NOT-CONVERGED")
        print(
            f"{label:28s} {_g(row['pi1']):>8s} {_g(row['pi2']):>8s} {_g(row['tau']):>8s} "
            f"{_g(row['loglik']):>10s} {_g(row['vuong_p']):>8s} {flags}"
        )
    for f in failures:
        print(f"fit failed: {f}", file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------
# sroc command
# ---------------------------------------------------------------------------


def cmd_sroc(args) -> int:
    dataset = ingest(args.data)
    quantiles = tuple(float(q) for q in args.quantiles.split(","))
    levels = tuple(float(p) for p in args.levels.split(","))
    scale = 1.0 if args.margin == "normal" else 0.1
    template = ModelSpec(
        MarginSpec(args.margin, 0.5, scale),
        MarginSpec(args.margin, 0.5, scale),
        _copula_from_name(args.copula, 0.5 if args.copula in ("bvn", "frank") else 1.0),
    )
    res = fit(dataset.studies, template, FitOptions(nq=args.nq))
    if not res.converged:
        print("fit did not converge; no curves written", file=sys.stderr)
        return 2
    curve_set = build_curve_set(
        res,
        quantiles=quantiles,
        levels=levels,
        direction=args.direction,
        coverage=args.coverage,
        resolution=args.resolution,
    )

    studies = np.array(
        [
            (1.0 - s.y2 / s.n2, s.y1 / s.n1, s.n1 + s.n2)
            for s in dataset.studies
        ]
    )
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["fpr", "sens", "weight"])
    for row in studies:
        writer.writerow([_g(row[0]), _g(row[1]), _g(row[2])])
    _write_atomic(os.path.join(args.out, "studies.csv"), buf.getvalue())

    if curve_set.boundary:
        curve = curve_set.quantile_curves[quantiles[0]]
        _write_atomic(
            os.path.join(args.out, "curve_boundary.csv"), _points_csv(curve, ("fpr", "sens"))
        )
        _write_atomic(
            os.path.join(args.out, "NOTICE.txt"),
            "dependence at the countermonotonic boundary: all quantile curves coincide;\n"
            "single deterministic curve written to curve_boundary.csv; contours omitted\n",
        )
        print("boundary fit: single curve written (quantile curves coincide)")
    else:
        for q, curve in curve_set.quantile_curves.items():
            _write_atomic(
                os.path.join(args.out, f"curve_q{format(q, 'g')}.csv"),
                _points_csv(curve, ("fpr", "sens")),
            )
        for level, loops in curve_set.predictive_contours.items():
            buf = io.StringIO()
            writer = csv.writer(buf, lineterminator="\n")
            writer.writerow(["fpr", "sens", "loop"])
            for k, loop in enumerate(loops):
                for row in loop:
                    writer.writerow([_g(row[0]), _g(row[1]), k])
            _write_atomic(os.path.join(args.out, f"contour_{format(level, 'g')}.csv"), buf.getvalue())

    point = curve_set.summary_point
    _write_atomic(
        os.path.join(args.out, "summary_point.csv"),
        f"sens,spec\n{_g(point[0])},{_g(point[1])}\n",
    )
    if curve_set.confidence_region is not None:
        region = curve_set.confidence_region
        roc = np.column_stack((1.0 - region[:, 1], region[:, 0]))
        _write_atomic(
            os.path.join(args.out, "confidence_region.csv"), _points_csv(roc, ("fpr", "sens"))
        )
    print(f"SROC outputs written to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# simulate command
# ---------------------------------------------------------------------------


def _parse_fit_spec(text: str) -> ModelSpec:
    parts = text.split(":")
    if parts[0] == "sarmanov":
        return ModelSpec(MarginSpec("beta", 0.5, 0.1), MarginSpec("beta", 0.5, 0.1), None, "sarmanov")
    if parts[0] == "khs":
        if len(parts) != 2:
            raise DomainError(f"khs spec needs a copula, e.g. khs:clayton270, got {text!r}")
        return ModelSpec(
            MarginSpec("beta", 0.5, 0.1),
            MarginSpec("beta", 0.5, 0.1),
            _copula_from_name(parts[1], 1.0),
            variant="khs",
        )
    if len(parts) != 2 or parts[0] not in MARGIN_NAMES:
        raise DomainError(f"fit spec must be margin:copula, khs:copula, or sarmanov, got {text!r}")
    scale = 1.0 if parts[0] == "normal" else 0.1
    return ModelSpec(
        MarginSpec(parts[0], 0.5, scale),
        MarginSpec(parts[0], 0.5, scale),
        _copula_from_name(parts[1], 1.0),
    )


def cmd_simulate(args) -> int:
    pi1, pi2 = (float(v) for v in args.pi.split(","))
    s1, s2 = (float(v) for v in args.scale.split(","))
    true_copula = _copula_from_name(args.true_copula, 1.0)
    spec = tau_to_theta(true_copula.family, true_copula.rotation, args.tau)
    true_model = ModelSpec(
        MarginSpec(args.true_margin, pi1, s1), MarginSpec(args.true_margin, pi2, s2), spec
    )
    fitted = tuple(_parse_fit_spec(f) for f in args.fit.split(","))
    config = SimConfig(
        n_studies=args.n_studies,
        replications=args.replications,
        true_model=true_model,
        fitted_models=fitted,
        seed=args.seed,
        nq=args.nq,
        jobs=args.jobs,
    )
    report = run_sim_study(config)
    _write_atomic(os.path.join(args.out, "sim_report.csv"), report.to_csv())
    meta = {
        "replications": report.replications,
        "n_studies": report.n_studies,
        "converged": report.converged,
        "excluded": report.excluded,
        "flagged": report.flagged,
        "redraws": report.redraws,
    }
    _write_atomic(os.path.join(args.out, "sim_report.json"), json.dumps(meta, indent=2) + "\n")
    print(report.to_csv(), end="")
    if report.flagged:
        print("warning: a model exceeded 20% non-convergence", file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------
# asymptotics command
# ---------------------------------------------------------------------------


def cmd_asymptotics(args) -> int:
    rhos = [float(v) for v in args.rho.split(",")]
    pis = [float(v) for v in args.pi.split(",")]
    gammas = [float(v) for v in args.gamma.split(",")]
    sizes = [int(v) for v in args.n.split(",")]
    if max(sizes) > 100 and not args.allow_large:
        raise DomainError("group sizes above 100 are costly; pass --allow-large to proceed")
    rule = gauss_legendre(args.nq)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = ["rho_true", "n", "rho_khs", "pi_true", "pi_khs", "gamma_true", "gamma_khs"]
    if args.with_mle:
        header += ["rho_mle", "pi_mle", "gamma_mle"]
    writer.writerow(header)
    for n in sizes:
        for rho in rhos:
            for pi in pis:
                for gamma in gammas:
                    margin = MarginSpec("beta", pi, gamma)
                    model = ModelSpec(margin, margin, CopulaSpec("bvn", rho))
                    table = model_probabilities(n, model, rule)
                    khs = limiting_khs(table)
                    row = [_g(rho), n, _g(khs.theta), _g(pi), _g(khs.pi), _g(gamma), _g(khs.scale)]
                    if args.with_mle:
                        mle = limiting_mle(table, rule)
                        row += [_g(mle.theta), _g(mle.pi), _g(mle.scale)]
                    writer.writerow(row)
    _write_atomic(os.path.join(args.out, "limits.csv"), buf.getvalue())
    print(buf.getvalue(), end="")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="copulameta",
        description="Copula mixed models for bivariate meta-analysis of diagnostic accuracy studies",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit a model grid to a study table")
    p_fit.add_argument("data", help="CSV with header study,TP,FN,FP,TN")
    p_fit.add_argument("--out", default=".", help="output directory")
    p_fit.add_argument("--margins", default="normal,beta")
    p_fit.add_argument("--copulas", default="bvn,frank,clayton0,clayton90,clayton180,clayton270")
    p_fit.add_argument("--with-khs", action="store_true")
    p_fit.add_argument("--with-sarmanov", action="store_true")
    p_fit.add_argument("--nq", type=int, default=DEFAULT_NQ)
    p_fit.add_argument("--jobs", type=int, default=1)
    p_fit.set_defaults(func=cmd_fit)

    p_sroc = sub.add_parser("sroc", help="fit one model and write SROC curve data")
    p_sroc.add_argument("data")
    p_sroc.add_argument("--margin", default="beta", choices=MARGIN_NAMES)
    p_sroc.add_argument("--copula", default="bvn")
    p_sroc.add_argument("--quantiles", default=",".join(str(q) for q in DEFAULT_QUANTILES))
    p_sroc.add_argument("--levels", default=",".join(str(p) for p in DEFAULT_LEVELS))
    p_sroc.add_argument("--direction", default="x1_on_x2", choices=("x1_on_x2", "x2_on_x1"))
    p_sroc.add_argument("--coverage", type=float, default=0.95)
    p_sroc.add_argument("--resolution", type=int, default=400)
    p_sroc.add_argument("--out", default=".")
    p_sroc.add_argument("--nq", type=int, default=DEFAULT_NQ)
    p_sroc.set_defaults(func=cmd_sroc)

    p_sim = sub.add_parser("simulate", help="run a seeded efficiency study")
    p_sim.add_argument("--n-studies", type=int, required=True)
    p_sim.add_argument("--replications", type=int, required=True)
    p_sim.add_argument("--true-margin", default="beta", choices=MARGIN_NAMES)
    p_sim.add_argument("--true-copula", default="clayton270")
    p_sim.add_argument("--tau", type=float, default=-0.5)
    p_sim.add_argument("--pi", default="0.7,0.9", help="pi1,pi2")
    p_sim.add_argument("--scale", default="0.2,0.1", help="scale1,scale2")
    p_sim.add_argument("--fit", default="beta:clayton270", help="comma list of margin:copula / khs:copula / sarmanov")
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--nq", type=int, default=DEFAULT_NQ)
    p_sim.add_argument("--jobs", type=int, default=1)
    p_sim.add_argument("--out", default=".")
    p_sim.set_defaults(func=cmd_simulate)

    p_asy = sub.add_parser("asymptotics", help="limiting KHS (and MLE) estimates")
    p_asy.add_argument("--rho", default="-0.2,-0.5,-0.8,-1.0")
    p_asy.add_argument("--pi", default="0.7")
    p_asy.add_argument("--gamma", default="0.1")
    p_asy.add_argument("--n", default="20")
    p_asy.add_argument("--nq", type=int, default=50)
    p_asy.add_argument("--with-mle", action="store_true")
    p_asy.add_argument("--allow-large", action="store_true")
    p_asy.add_argument("--out", default=".")
    p_asy.set_defaults(func=cmd_asymptotics)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DatasetParseError, DatasetValidationError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ConvergenceError as exc:
        print(f"convergence failure: {exc}", file=sys.stderr)
        return 2
    except (NumericOverflowError, LikelihoodEvaluationError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
