"""Command line interface.

Every command prints a JSON run report with the command name, sha256
digests of its input files, the model hash, the outputs and any
diagnostics.  Exit codes: 0 success, 1 usage, 2 domain error (improper
prior, non-interior probabilities, mismatched files), 3 numerical
warnings escalated by ``--strict``.
"""

from __future__ import annotations

import argparse
import csv
import io as _io
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import io
from .decomposable import NotDecomposableError
from .estimate import (
    EstimationError,
    EvidencePolicy,
    bayes_factor,
    log_i,
    prior_moment_exp_theta,
)
from .induced import DegenerateJacobianError, build_f_matrix, jacobian_factor
from .model import ModelError, format_label
from .param import (
    FullProbTable,
    ParametrizationError,
    complete_cells,
    free_from_full,
    full_from_theta,
    theta_from_full,
)
from .prior import (
    ImproperPriorError,
    check_proper,
    construct_from_prior_table,
    construct_from_theta,
    necessary_conditions,
    perks_prior,
    posterior_update,
)

EXIT_OK, EXIT_USAGE, EXIT_DOMAIN, EXIT_UNSTABLE = 0, 1, 2, 3
DOMAIN_ERRORS = (ModelError, ParametrizationError, ImproperPriorError, DegenerateJacobianError,
                 NotDecomposableError, EstimationError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class Run:
    """Collects what goes into the run report."""

    def __init__(self, command: str):
        self.command = command
        self.inputs = {}
        self.model_hash = None
        self.outputs = {}
        self.diagnostics = []

    def read(self, label: str, path):
        if not Path(path).is_file():
            raise UsageError(f"no such file: {path}")
        self.inputs[label] = io.file_digest(path)
        return path

    def model(self, path, label="model"):
        m = io.read_model(self.read(label, path))
        if self.model_hash is None:
            self.model_hash = m.hash
        return m

    def report(self) -> dict:
        return {"command": self.command, "inputs": self.inputs, "model_hash": self.model_hash,
                "outputs": self.outputs, "diagnostics": self.diagnostics}


def _write_output(run: Run, path, payload: dict):
    if path:
        io.write_json(path, payload)
        run.outputs["file"] = str(path)
    else:
        run.outputs["content"] = payload


def _policy(args) -> EvidencePolicy:
    method = "closed" if getattr(args, "closed_form", False) else args.method
    return EvidencePolicy(method=method, draws=args.draws, seed=args.seed, workers=args.workers)


def _proper_or_fail(hyper, what="hyperparameters"):
    rep = check_proper(hyper)
    if not rep.proper:
        raise ImproperPriorError(f"{what} give an improper prior: {rep.reason}")


# -- commands --------------------------------------------------------------

def cmd_transform(args, run: Run):
    model = run.model(args.model)
    doc = io.read_json(run.read("input", args.input))
    d = args.direction
    if d == "theta-to-p":
        theta = io.theta_from_json(doc, model)
        probs = full_from_theta(theta)
        back = theta_from_full(probs, model)
        payload = io.probs_to_json(probs, model)
        residual = float(np.max(np.abs(back.values - theta.values), initial=0.0))
    elif d in ("p-to-theta", "p-to-free"):
        arr = io.probs_from_json(doc, model)
        table = FullProbTable(model.space, arr)
        if np.any(table.probs <= 0):
            raise ParametrizationError("probabilities must lie in the open simplex (a cell is zero)")
        theta = theta_from_full(table, model, strict=args.strict_model)
        fitted = full_from_theta(theta).probs
        residual = float(np.max(np.abs(fitted - table.probs)))
        if residual > 1e-10:
            run.diagnostics.append(f"table is not in the model; projection changed cells by up to {residual:.3g}")
        if d == "p-to-theta":
            payload = io.theta_to_json(theta)
        else:
            free = free_from_full(fitted, model)
            payload = io.free_to_json(free)
            if model.is_graphical:
                k = jacobian_factor(free).K
                run.outputs["K"] = k
                if k <= 0:
                    run.diagnostics.append(f"correction factor K = {k:.6g} is not positive at this point")
    else:  # free-to-p
        free = io.free_from_json(doc, model)
        probs = complete_cells(free)
        payload = io.probs_to_json(probs, model)
        back = free_from_full(probs, model)
        residual = float(np.max(np.abs(back.values - free.values), initial=abs(back.p_empty - free.p_empty)))
    run.outputs["round_trip_residual"] = residual
    _write_output(run, args.out, payload)


def cmd_prior(args, run: Run):
    model = run.model(args.model)
    if args.prior_cmd == "check":
        hyper = io.hyper_from_json(io.read_json(run.read("hyper", args.hyper)), model)
        rep = check_proper(hyper)
        run.outputs.update({"proper": rep.proper, "residual": rep.residual, "iterations": rep.iterations,
                            "reason": rep.reason, "necessary_condition_violations": necessary_conditions(hyper)})
        if rep.witness is not None:
            run.outputs["witness"] = io.probs_to_json(rep.witness, model)["cells"]
        return EXIT_OK if rep.proper else EXIT_DOMAIN
    if args.prior_cmd == "from-theta":
        theta = io.theta_from_json(io.read_json(run.read("theta", args.theta)), model)
        hyper = construct_from_theta(theta, args.alpha)
    elif args.prior_cmd == "from-table":
        hyper = construct_from_prior_table(io.read_table(run.read("table", args.table), model.space), model)
    else:
        hyper = perks_prior(model)
    run.outputs["alpha"] = hyper.alpha
    _write_output(run, args.out, io.hyper_to_json(hyper))
    return EXIT_OK


def cmd_posterior(args, run: Run):
    model = run.model(args.model)
    hyper = io.hyper_from_json(io.read_json(run.read("hyper", args.hyper)), model)
    data = io.read_table(run.read("table", args.table), model.space)
    post = posterior_update(hyper, data)
    run.outputs.update({"n": data.total, "alpha": post.alpha})
    _write_output(run, args.out, io.hyper_to_json(post))


def _scale(value, log10: bool):
    return value / np.log(10) if log10 else value


def cmd_evidence(args, run: Run):
    model = run.model(args.model)
    hyper = io.hyper_from_json(io.read_json(run.read("hyper", args.hyper)), model)
    _proper_or_fail(hyper)
    res = log_i(model, hyper, _policy(args))
    out = res.to_json()
    out["log_i"] = _scale(res.log_i, args.log10)
    if res.std_error is not None:
        out["std_error"] = _scale(res.std_error, args.log10)
    out["base"] = "10" if args.log10 else "e"
    run.outputs.update(out)
    run.diagnostics.extend(res.diagnostics)


def cmd_bf(args, run: Run):
    m1 = run.model(args.model1, "model1")
    m2 = run.model(args.model2, "model2")
    run.model_hash = [m1.hash, m2.hash]
    h1 = io.hyper_from_json(io.read_json(run.read("hyper1", args.hyper1)), m1)
    h2 = io.hyper_from_json(io.read_json(run.read("hyper2", args.hyper2)), m2)
    data = io.read_table(run.read("table", args.table), m1.space)
    bf = bayes_factor(m1, m2, h1, h2, data, _policy(args), local=not args.global_)
    run.outputs.update({"log_bf": _scale(bf.log_bf, args.log10), "base": "10" if args.log10 else "e",
                        "recomputed_terms": bf.recomputed, "cancelled_terms": bf.cancelled})
    if bf.std_error is not None:
        run.outputs["std_error"] = _scale(bf.std_error, args.log10)
    run.diagnostics.extend(bf.diagnostics)


def cmd_elicit(args, run: Run):
    model = run.model(args.model)
    hyper = io.hyper_from_json(io.read_json(run.read("hyper", args.hyper)), model)
    _proper_or_fail(hyper)
    subset = args.set.split(",") if "," in args.set else list(args.set)
    cell = tuple(int(c) for c in args.cell.split(",")) if args.cell else (1,) * len(subset)
    mom = prior_moment_exp_theta(hyper, subset, cell, args.order, _policy(args))
    run.outputs.update({"set": list(model.space.canonical(subset)), "cell": list(cell),
                        "statistic": "mean" if args.order == 1 else "variance",
                        "value": mom.value, "method": mom.method})
    if mom.std_error is not None:
        run.outputs["std_error"] = mom.std_error


def cmd_dump_f_matrix(args, run: Run):
    model = run.model(args.model)
    f = build_f_matrix(model)
    dense = f.dense()
    space = model.space
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["row"] + [format_label(space, h, c) for h, c in f.cols])
    for (d, c), row in zip(f.rows, dense):
        w.writerow([format_label(space, d, c)] + [int(v) for v in row])
    text = buf.getvalue()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        run.outputs["file"] = str(args.out)
    else:
        sys.stdout.write(text)
    run.outputs["shape"] = list(dense.shape)


# -- parser ----------------------------------------------------------------

def _evidence_flags(p):
    p.add_argument("--method", choices=["auto", "closed", "laplace", "is"], default="auto")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--draws", type=int, default=100_000)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--log10", action="store_true", help="report base-10 logarithms")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="conjloglin", description="Conjugate Bayesian analysis of log-linear models.")
    parser.add_argument("--strict", action="store_true", help="exit with 3 when numerical warnings occur")
    parser.add_argument("--report", help="write the run report here instead of stdout")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("transform", help="convert between theta and cell probabilities")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--direction", required=True, choices=["theta-to-p", "p-to-theta", "p-to-free", "free-to-p"])
    p.add_argument("--strict-model", action="store_true", help="reject tables that are not in the model")
    p.add_argument("--out")
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("prior", help="construct or check hyperparameters")
    psub = p.add_subparsers(dest="prior_cmd", required=True, parser_class=_Parser)
    q = psub.add_parser("from-theta")
    q.add_argument("--theta", required=True)
    q.add_argument("--alpha", type=float, default=1.0)
    q = psub.add_parser("from-table")
    q.add_argument("--table", required=True)
    psub.add_parser("perks")
    q = psub.add_parser("check")
    q.add_argument("--hyper", required=True)
    for q in psub.choices.values():
        q.add_argument("--model", required=True)
        q.add_argument("--out")
    p.set_defaults(func=cmd_prior)

    p = sub.add_parser("posterior", help="add a table's marginal counts to the hyperparameters")
    p.add_argument("--model", required=True)
    p.add_argument("--hyper", required=True)
    p.add_argument("--table", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_posterior)

    p = sub.add_parser("evidence", help="log normalizing constant of the prior")
    p.add_argument("--model", required=True)
    p.add_argument("--hyper", required=True)
    p.add_argument("--closed-form", action="store_true", help="require the decomposable closed form")
    _evidence_flags(p)
    p.set_defaults(func=cmd_evidence)

    p = sub.add_parser("bf", help="log Bayes factor of model 1 against model 2")
    p.add_argument("--model1", required=True)
    p.add_argument("--hyper1", required=True)
    p.add_argument("--model2", required=True)
    p.add_argument("--hyper2", required=True)
    p.add_argument("--table", required=True)
    p.add_argument("--global", dest="global_", action="store_true",
                   help="recompute whole-model evidences instead of only the differing components")
    _evidence_flags(p)
    p.set_defaults(func=cmd_bf)

    p = sub.add_parser("elicit", help="prior mean or variance of exp(theta) for one parameter")
    p.add_argument("--model", required=True)
    p.add_argument("--hyper", required=True)
    p.add_argument("--set", required=True, help="interaction set, e.g. 'bc' or 'x,y'")
    p.add_argument("--cell", help="comma separated levels; defaults to all ones")
    p.add_argument("--order", type=int, choices=[1, 2], default=1)
    _evidence_flags(p)
    p.set_defaults(func=cmd_elicit)

    p = sub.add_parser("dump-f-matrix", help="write the signed incidence matrix as CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_dump_f_matrix)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    run = Run(args.command if args.command != "prior" else f"prior {args.prior_cmd}")
    status = EXIT_OK
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            status = args.func(args, run) or EXIT_OK
        except UsageError as exc:
            print(f"conjloglin: error: {exc}", file=sys.stderr)
            return EXIT_USAGE
        except (DOMAIN_ERRORS + (IndexError, KeyError, TypeError)) as exc:
            run.outputs = {}
            run.diagnostics.append(f"error: {exc}")
            print(f"conjloglin: error: {exc}", file=sys.stderr)
            status = EXIT_DOMAIN
    run.diagnostics.extend(str(w.message) for w in caught)
    if status == EXIT_OK and args.strict and run.diagnostics:
        status = EXIT_UNSTABLE
    text = io.dumps(run.report())
    if args.report:
        Path(args.report).write_text(text, encoding="utf-8")
    elif args.command != "dump-f-matrix" or args.out:
        sys.stdout.write(text)
    return status


if __name__ == "__main__":
    sys.exit(main())
