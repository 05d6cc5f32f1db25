"""Command-line entry point ``spectral-certify``.

Verbs: ``bound``, ``plan``, ``variance``, ``verify-lemmas``, ``simulate``,
``validate`` and ``report``.  Every run prints its resolved configuration
as a ``# {...}`` JSON header line followed by CSV records; ``--out`` writes
the same content to a file (JSON when the name ends in ``.json``).

Exit codes: 0 success, 1 usage or input error, 2 inapplicable bound (or an
infeasible plan), 3 failed verification or validation.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys

import numpy as np

from . import bounds as B
from .chains import BernoulliChain, HypercubeChain, bernoulli_gap, bernoulli_indicator_mean, resolve_chain
from .kernel import (
    FiniteKernel,
    GapCertificate,
    NoContractionError,
    estimate_gap,
    exact_gap_certificate,
    stationary_measure,
    sup_osc_gap_certificate,
)
from .montecarlo import (
    VALIDATION_COLUMNS,
    SimulationConfig,
    ValidationReport,
    simulate_tail,
    validate_berry_esseen,
    validate_bounds,
)
from .norms import FunctionSpace, norm, normalize_observable
from .perturbation import (
    charfn_t_limit,
    LemmaReport,
    smallness_radius,
    threshold_steps,
    verify_charfn_estimates,
    verify_gap_persistence,
    verify_iterated_estimates,
    verify_lemma_estimates,
)
from .variance import dynamical_variance_exact, dynamical_variance_truncated

log = logging.getLogger(__name__)

EXIT_OK, EXIT_USAGE, EXIT_INAPPLICABLE, EXIT_FAILED = 0, 1, 2, 3
SUITES = ("estimates", "eigenvalue", "projection", "iterated", "gap-persist", "charfn")
NORMS = ("sup-osc", "lipschitz", "local-tv", "bv")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# -- resolution helpers -----------------------------------------------------


def _kernel_of(chain):
    if isinstance(chain, HypercubeChain):
        if chain.kernel is None:
            raise UsageError("this command needs an explicit kernel (hypercube N <= 10)")
        return chain.kernel
    if isinstance(chain, FiniteKernel):
        return chain
    raise UsageError("this command needs a finite chain")


def _space(chain, name):
    k = chain.kernel if isinstance(chain, HypercubeChain) else chain
    if name == "sup-osc":
        return FunctionSpace.sup_osc(k.n)
    if name == "lipschitz":
        if isinstance(chain, HypercubeChain):
            return chain.lip_space
        if k.metric is None:
            raise UsageError("chain has no metric for the Lipschitz norm")
        return FunctionSpace.weighted_lipschitz(k.metric)
    if name == "local-tv":
        if isinstance(chain, HypercubeChain):
            return chain.tv_space
        if k.adjacency is None:
            raise UsageError("chain has no adjacency for the local total-variation norm")
        return FunctionSpace.local_tv(k.adjacency)
    if name == "bv":
        return FunctionSpace.bv_interval(k.n)
    raise UsageError(f"unknown norm id {name!r}")


def _observable(chain, spec):
    """Values vector (finite chains) or step function (Bernoulli chain)."""
    name, _, arg = spec.partition(":")
    if isinstance(chain, BernoulliChain):
        if name != "interval":
            raise UsageError("the Bernoulli chain takes interval:left,right observables")
        left, right = (float(v) for v in arg.split(","))
        return chain.indicator(left, right)
    n = chain.n_states if isinstance(chain, HypercubeChain) else chain.n
    if name == "values":
        vals = np.array([float(v) for v in arg.split(",")])
        if vals.size != n:
            raise UsageError(f"observable has {vals.size} values, chain has {n} states")
        return vals
    if name == "indicator":
        vals = np.zeros(n)
        vals[[int(v) for v in arg.split(",")]] = 1.0
        return vals
    if isinstance(chain, HypercubeChain):
        if name == "first-coordinate":
            return chain.first_coordinate_zero()
        if name == "polarization":
            return chain.polarization()
    raise UsageError(f"unknown observable id {spec!r}")


def _gap(args, chain, space):
    if args.delta0 is not None:
        return GapCertificate(args.delta0, space, "user")
    if isinstance(chain, BernoulliChain):
        return bernoulli_gap(chain.lam)
    k = _kernel_of(chain)
    try:
        return exact_gap_certificate(k, space)
    except ValueError:
        pass
    if space.kind.value == "SupOsc":
        try:
            return sup_osc_gap_certificate(k)
        except NoContractionError:
            pass
    return estimate_gap(k, space, seed=args.seed)


def _emit(args, config, columns, rows):
    """Print header and CSV rows; mirror to ``--out``."""
    buf = io.StringIO()
    buf.write("# " + json.dumps(config, sort_keys=True, default=str) + "\n")
    w = csv.writer(buf)
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(r.get(c)) for c in columns])
    text = buf.getvalue()
    sys.stdout.write(text)
    if getattr(args, "out", None):
        with open(args.out, "w", newline="") as fh:
            if args.out.endswith(".json"):
                json.dump({"config": config, "columns": list(columns),
                           "records": [{c: r.get(c) for c in columns} for r in rows]},
                          fh, indent=2, default=str)
            else:
                fh.write(text)


def _cell(v):
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (dict, list)):
        return json.dumps(v, sort_keys=True)
    return "" if v is None else v


def _bound_rows(reports):
    return [{"theorem": r.theorem, "regime": r.regime, "inputs": r.inputs, "raw_value": r.raw_value,
             "capped_value": r.value, "conditions": [vars(c) for c in r.conditions],
             "certified": r.certified, "applicable": r.applicable, "reason": r.reason}
            for r in reports]


def _lemma_rows(rep: LemmaReport):
    return [{"lemma_id": r.lemma_id, "inequality_id": r.inequality_id, "lhs": r.lhs, "rhs": r.rhs,
             "margin": r.margin, "holds": r.holds} for r in rep.records]


# -- verbs ------------------------------------------------------------------


def cmd_bound(args):
    cert = GapCertificate(args.delta0, provenance=args.provenance)
    if args.theorem == "C":
        if args.a is not None:
            raise UsageError("contradictory flags: --theorem C takes no --a")
        if args.phi_tilde_norm is None or args.n is None:
            raise UsageError("--theorem C needs --phi-tilde-norm and --n")
        try:
            rep = B.berry_esseen_bound(B.BoundQuery(cert, n=args.n, phi_tilde_norm=args.phi_tilde_norm))
        except ValueError as e:
            raise UsageError(str(e))
    else:
        if args.phi_tilde_norm is not None:
            raise UsageError(f"contradictory flags: --theorem {args.theorem} takes no --phi-tilde-norm")
        if None in (args.phi_norm, args.a, args.n):
            raise UsageError(f"--theorem {args.theorem} needs --phi-norm, --a and --n")
        q = B.BoundQuery(cert, args.phi_norm, args.a, args.n, args.S)
        if args.theorem == "A":
            if args.U is not None:
                raise UsageError("contradictory flags: --U only applies to --theorem B")
            rep = B.concentration_bound(q)
        else:
            if args.S is None and args.U is None:
                raise UsageError("--theorem B needs --S (variance bound) or --U")
            rep = B.second_order_bound(q, args.U)
    config = {"verb": "bound", "theorem": args.theorem, **rep.inputs}
    _emit(args, config, B.CSV_COLUMNS, _bound_rows([rep]))
    return EXIT_OK if rep.applicable else EXIT_INAPPLICABLE


def cmd_plan(args):
    cert = GapCertificate(args.delta0, provenance=args.provenance)
    q = B.BoundQuery(cert, args.phi_norm, args.a, S=args.S, beta=args.beta)
    try:
        rep = B.plan_sample_size(q)
    except B.PlanningError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INAPPLICABLE
    _emit(args, {"verb": "plan", **q.echo()}, B.CSV_COLUMNS, _bound_rows([rep]))
    return EXIT_OK


VARIANCE_COLUMNS = ("sigma2", "method", "truncation_K", "tail_bound")


def cmd_variance(args):
    chain = resolve_chain(args.chain)
    k = _kernel_of(chain)
    phi = _observable(chain, args.observable)
    space = _space(chain, args.norm)
    if args.truncate is not None:
        cert = _gap(args, chain, space)
        res = dynamical_variance_truncated(k, phi, args.truncate, cert, space)
        extra = {"delta0": cert.delta0, "provenance": cert.provenance}
    else:
        res = dynamical_variance_exact(k, phi)
        extra = {}
    config = {"verb": "variance", "chain": args.chain, "observable": args.observable,
              "norm": args.norm, "truncate": args.truncate, **extra}
    _emit(args, config, VARIANCE_COLUMNS, [vars(res)])
    return EXIT_OK


def cmd_verify(args):
    chain = resolve_chain(args.chain)
    k = _kernel_of(chain)
    space = _space(chain, args.norm)
    cert = _gap(args, chain, space)
    if args.observable:
        direction = np.asarray(_observable(chain, args.observable), dtype=float)
    else:
        direction = np.random.default_rng(args.seed).standard_normal(k.n)
    if args.suite == "charfn":
        n = args.n or 10_000
        mu0 = stationary_measure(k).weights
        tilde = normalize_observable(direction, mu0, dynamical_variance_exact(k, direction, mu0).sigma2, space)
        tmax = charfn_t_limit(tilde.norm_value, cert.delta0, n)
        grid = np.linspace(-tmax, tmax, 21)
        rep = verify_charfn_estimates(k, cert, direction, n, grid, space)
    else:
        if not 0 < args.phi_scale <= 1:
            raise UsageError("--phi-scale must lie in (0, 1] (fraction of the smallness radius)")
        d_norm = float(norm(space, direction))
        if d_norm == 0:
            raise UsageError("observable has zero norm")
        phi = direction * (args.phi_scale * smallness_radius(cert) / d_norm)
        if args.suite in ("estimates", "eigenvalue", "projection"):
            full = verify_lemma_estimates(k, cert, phi, space, seed=args.seed)
            wanted = {"estimates": "operator_perturbation", "eigenvalue": "leading_eigenvalue",
                      "projection": "spectral_projection"}[args.suite]
            rep = LemmaReport([r for r in full.records if r.lemma_id == wanted], full.advisory,
                              full.context)
        elif args.suite == "iterated":
            rep = verify_iterated_estimates(k, cert, phi, args.n or threshold_steps(cert), space)
        else:
            rep = verify_gap_persistence(k, cert, phi, cert.delta0 / 13.0, args.n or 50, space,
                                         seed=args.seed)
    config = {"verb": "verify-lemmas", "chain": args.chain, "suite": args.suite, "norm": args.norm,
              "delta0": cert.delta0, "provenance": cert.provenance, "phi_scale": args.phi_scale,
              "advisory": rep.advisory, **{k_: v for k_, v in rep.context.items() if k_ != "space"}}
    _emit(args, config, ("lemma_id", "inequality_id", "lhs", "rhs", "margin", "holds"), _lemma_rows(rep))
    return EXIT_OK if rep.all_hold else EXIT_FAILED


TAIL_COLUMNS = ("a", "hits", "trials", "p_hat", "ci_upper_99")


def _mean_for(chain, phi):
    if isinstance(chain, BernoulliChain):
        return bernoulli_indicator_mean(chain.lam, *_interval_of(phi))
    return None


def _interval_of(step):
    # indicator built by BernoulliChain.indicator: breaks bracket the interval
    lo, hi = step.lo, step.hi
    b = list(step.breaks)
    left = b[0] if step.values[0] == 0.0 else lo
    right = b[-1] if step.values[-1] == 0.0 else hi
    return left, right


def _sim_config(args, chain, phi):
    return SimulationConfig(chain, phi, args.n, args.trials, args.seed,
                            chain_id=args.chain, observable_id=args.observable)


def cmd_simulate(args):
    chain = resolve_chain(args.chain)
    phi = _observable(chain, args.observable)
    cfg = _sim_config(args, chain, phi)
    a_list = [float(v) for v in args.a.split(",")]
    ests = simulate_tail(cfg, a_list, mean=_mean_for(chain, phi))
    config = {"verb": "simulate", "chain": args.chain, "observable": args.observable, "n": args.n,
              "trials": args.trials, "seed": args.seed}
    _emit(args, config, TAIL_COLUMNS, [vars(e) for e in ests])
    return EXIT_OK


def _parse_grid(text):
    grid = {}
    for part in text.split(";"):
        key, _, vals = part.partition("=")
        grid[key.strip()] = [float(v) for v in vals.split(",") if v.strip()]
    return grid


def cmd_validate(args):
    chain = resolve_chain(args.chain)
    phi = _observable(chain, args.observable)
    grid = _parse_grid(args.grid)
    if args.theorem == "C":
        if "a" in grid:
            raise UsageError("contradictory flags: --theorem C takes no a grid")
        k = _kernel_of(chain)
        space = _space(chain, args.norm)
        cert = _gap(args, chain, space)
        rep = validate_berry_esseen(k, phi, cert, [int(n) for n in grid["n"]], space,
                                    chain_id=args.chain, observable_id=args.observable,
                                    norm_name=args.norm)
    else:
        if isinstance(chain, BernoulliChain):
            cert = _gap(args, chain, None)
            phi_norm = phi.bv_norm()
        else:
            space = _space(chain, args.norm)
            cert = _gap(args, chain, space)
            phi_norm = float(norm(space, phi))
        ns = [int(n) for n in grid.get("n", [])] or [threshold_steps(cert), 4 * threshold_steps(cert)]
        cfg = SimulationConfig(chain, phi, max(ns), args.trials, args.seed,
                               chain_id=args.chain, observable_id=args.observable)
        S = None
        if args.theorem == "B":
            S = dynamical_variance_exact(_kernel_of(chain), phi).sigma2
        rep = validate_bounds(cfg, cert, phi_norm, grid["a"], ns, args.theorem,
                              mean=_mean_for(chain, phi), S=S, norm_name=args.norm)
    config = {"verb": "validate", "theorem": args.theorem, "chain": args.chain,
              "observable": args.observable, "grid": args.grid, "trials": args.trials,
              "seed": args.seed, "delta0": cert.delta0, "provenance": cert.provenance}
    _emit(args, config, VALIDATION_COLUMNS, rep.rows)
    return EXIT_OK if rep.passed else EXIT_FAILED


def read_records(path):
    """Parse a file written by any verb into ``(config, kind, records)``.

    ``kind`` is ``bound``, ``lemma``, ``validation``, ``tail`` or
    ``variance``; records are the library objects (or row dicts).
    """
    with open(path) as fh:
        text = fh.read()
    if path.endswith(".json"):
        doc = json.loads(text)
        config, columns = doc["config"], doc["columns"]
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(columns)
        for r in doc["records"]:
            w.writerow([_cell(r.get(c)) for c in columns])
        body = buf.getvalue()
    else:
        lines = text.splitlines(True)
        config = json.loads(lines[0][2:]) if lines and lines[0].startswith("# ") else {}
        body = "".join(l for l in lines if not l.startswith("#"))
        columns = next(csv.reader(io.StringIO(body)))
    cols = tuple(columns)
    if cols == B.CSV_COLUMNS:
        return config, "bound", B.reports_from_csv(body)
    if cols == ("lemma_id", "inequality_id", "lhs", "rhs", "margin", "holds"):
        return config, "lemma", LemmaReport.from_csv(body)
    if cols == VALIDATION_COLUMNS:
        return config, "validation", ValidationReport.from_csv(body)
    rows = list(csv.DictReader(io.StringIO(body)))
    if cols == TAIL_COLUMNS:
        return config, "tail", [{"a": float(r["a"]), "hits": int(r["hits"]),
                                 "trials": int(r["trials"]), "p_hat": float(r["p_hat"]),
                                 "ci_upper_99": float(r["ci_upper_99"])} for r in rows]
    if cols == VARIANCE_COLUMNS:
        return config, "variance", [{"sigma2": float(r["sigma2"]), "method": r["method"],
                                     "truncation_K": int(r["truncation_K"]) if r["truncation_K"] else None,
                                     "tail_bound": float(r["tail_bound"]) if r["tail_bound"] else None}
                                    for r in rows]
    raise UsageError(f"unrecognised record columns {cols}")


def cmd_report(args):
    config, kind, records = read_records(args.input)
    status = EXIT_OK
    if kind == "bound":
        lines = [f"{r.theorem:8s} {r.regime:13s} raw={r.raw_value:.6g} value={r.value:.6g} "
                 f"applicable={r.applicable} certified={r.certified}" + (f" ({r.reason})" if r.reason else "")
                 for r in records]
    elif kind == "lemma":
        lines = [f"{r.lemma_id}/{r.inequality_id}: {r.lhs:.6g} <= {r.rhs:.6g} "
                 f"{'ok' if r.holds else 'FAIL'}" for r in records.records]
        status = EXIT_OK if records.all_hold else EXIT_FAILED
    elif kind == "validation":
        lines = [f"{r['theorem']} n={r['n']} a={r['a']} ci={r['ci_upper_99']:.4g} bound={r['bound']:.4g} "
                 f"{'pass' if r['pass'] else 'FAIL'}" for r in records.rows]
        status = EXIT_OK if records.passed else EXIT_FAILED
    else:
        lines = [json.dumps(r, sort_keys=True) for r in records]
    print("# " + json.dumps(config, sort_keys=True, default=str))
    print(f"# {kind}: {len(lines)} record(s)")
    print("\n".join(lines))
    return status


# -- parser -----------------------------------------------------------------


def build_parser():
    p = _Parser(prog="spectral-certify", description="Explicit concentration bounds for Markov chains.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    def common_gap(sp):
        sp.add_argument("--delta0", type=float)
        sp.add_argument("--provenance", choices=("user", "analytic", "estimated"), default="user")

    sp = sub.add_parser("bound", help="evaluate one bound")
    sp.add_argument("--theorem", choices=("A", "B", "C"), required=True)
    common_gap(sp)
    sp.add_argument("--phi-norm", type=float)
    sp.add_argument("--phi-tilde-norm", type=float)
    sp.add_argument("--a", type=float)
    sp.add_argument("--n", type=int)
    sp.add_argument("--S", type=float)
    sp.add_argument("--U", type=float)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_bound, needs_delta0=True)

    sp = sub.add_parser("plan", help="smallest n reaching a target probability")
    common_gap(sp)
    sp.add_argument("--beta", type=float, required=True)
    sp.add_argument("--phi-norm", type=float, required=True)
    sp.add_argument("--a", type=float, required=True)
    sp.add_argument("--S", type=float)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_plan, needs_delta0=True)

    def chain_args(sp, observable_required=True):
        sp.add_argument("--chain", required=True,
                        help="hypercube:N, bernoulli:lambda, theta-lazy:k,theta, two-state:p,q or file:path")
        sp.add_argument("--observable", required=observable_required,
                        help="values:v1,..., indicator:i,..., first-coordinate, polarization, interval:l,r")
        sp.add_argument("--norm", choices=NORMS, default="sup-osc")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out")
        common_gap(sp)

    sp = sub.add_parser("variance", help="dynamical variance of an observable")
    chain_args(sp)
    sp.add_argument("--truncate", type=int)
    sp.set_defaults(func=cmd_variance)

    sp = sub.add_parser("verify-lemmas", help="check the perturbation estimates on a chain")
    chain_args(sp, observable_required=False)
    sp.add_argument("--suite", choices=SUITES, required=True)
    sp.add_argument("--phi-scale", type=float, default=0.9)
    sp.add_argument("--n", type=int)
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("simulate", help="empirical tail frequencies")
    chain_args(sp)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--trials", type=int, required=True)
    sp.add_argument("--a", default="0.05,0.1,0.2")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("validate", help="simulated tails or exact laws against a bound")
    chain_args(sp)
    sp.add_argument("--theorem", choices=("A", "B", "C"), required=True)
    sp.add_argument("--grid", required=True, help="e.g. 'a=0.05,0.1;n=500,2000'")
    sp.add_argument("--trials", type=int, default=100_000)
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("report", help="re-read and summarise an emitted CSV/JSON file")
    sp.add_argument("--in", dest="input", required=True)
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
        if getattr(args, "needs_delta0", False) and args.delta0 is None:
            raise UsageError("--delta0 is required")
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError, NoContractionError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
