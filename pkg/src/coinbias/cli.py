"""Command-line entry point: one analysis per invocation, results under ``--out``.

Every run writes ``report.json`` (validated against the bundled schema) plus
CSV files.  Exit status: 0 success, 2 invalid input or configuration, 3 a fit
that did not converge (artifacts are still written), 64 usage errors.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import io
import json
import math
import platform
import re
import sys
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy

from . import __version__
from .binomial import (
    DegeneratePriorError, HEADS_TAILS_PRIOR, SAME_SIDE_PRIOR, TruncatedBetaPrior, bf_informed_binomial,
    bf_symmetric_binomial, exact_binomial_p,
)
from .bma import BridgeError, BridgeSettings, run_bma
from .flipdata import (
    FlipDataset, IntegrityError, ParseError, ProtocolError, combined_row, exclude_outliers, ingest_csv,
    summarize_by, write_csv, write_summary_csv,
)
from .glmm import GLMMConvergenceError, ml_fit_random_intercept
from .hier import (
    CellData, ModelSpec, PriorSet, fit_report, fit_site_contrasts, sample_posterior, summarize_probability_scale,
)
from .learning import LearningPriors, fit_learning, learning_curve, learning_summary, make_batches, write_curve_csv
from .mcmc import PosteriorDraws, SamplerSettings
from .numerics import DomainError
from .priors import BetaLocation, GammaScale, HalfNormalScale, NormalLocation, NormalMomentLocation, \
    NormalMomentScale
from .sensitivity import DEFAULT_PHI_GRID, QuadratureError, bff_hier, bff_nonhier, write_bff_csv
from .simulator import coverage_table, recovery_report, sim_params_from_ini, simulate, uniform_config

__all__ = ["main", "RunConfig", "UsageError", "parse_prior", "load_prior_file"]

EXIT_OK, EXIT_VALIDATION, EXIT_CONVERGENCE, EXIT_USAGE = 0, 2, 3, 64
STOCHASTIC = {"fit-hier", "test-bma", "fit-learning", "sites", "simulate", "recover"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# -- prior files -------------------------------------------------------------

_PRIOR_RE = re.compile(r"^\s*([a-z_]+)\s*\(([^)]*)\)\s*$")


def parse_prior(text: str):
    """``beta(a,b[,lo,hi])``, ``normal(m,s)``, ``halfnormal(s)``, ``gamma(shape,rate)``,
    ``nm(phi)``, ``nm_positive(phi)`` or ``nm_scale(phi)``."""
    m = _PRIOR_RE.match(text.lower())
    if not m:
        raise ValueError(f"cannot parse prior {text!r}")
    name = m.group(1)
    try:
        args = [float(a) for a in m.group(2).split(",") if a.strip()]
    except ValueError:
        raise ValueError(f"non-numeric prior argument in {text!r}") from None
    table = {
        "beta": (BetaLocation, (2, 4)), "normal": (NormalLocation, (2,)), "halfnormal": (HalfNormalScale, (1,)),
        "gamma": (GammaScale, (2,)), "nm": (NormalMomentLocation, (1,)), "nm_scale": (NormalMomentScale, (1,)),
    }
    if name == "nm_positive":
        if len(args) != 1:
            raise ValueError("nm_positive takes one argument")
        return NormalMomentLocation(args[0], positive_only=True)
    if name not in table:
        raise ValueError(f"unknown prior family {name!r}")
    cls, arities = table[name]
    if len(args) not in arities:
        raise ValueError(f"{name} takes {' or '.join(map(str, arities))} arguments")
    return cls(*args)


_PRIOR_SECTIONS = {
    "estimation": {"alpha_mu", "beta_mu", "sigma_alpha", "sigma_beta"},
    "testing": {"alpha_mu", "beta_mu", "sigma_alpha", "sigma_beta"},
    "learning": set(LearningPriors.__dataclass_fields__),
    "binomial": {"same_side", "heads_tails"},
    "bff": {"grid", "target", "fixed_same_side", "fixed_heads_tails", "fixed_person_het", "fixed_coin_het"},
}


@dataclass
class PriorConfig:
    estimation: PriorSet = field(default_factory=PriorSet.estimation)
    testing: PriorSet = field(default_factory=PriorSet.testing)
    learning: LearningPriors = field(default_factory=LearningPriors)
    same_side: TruncatedBetaPrior = SAME_SIDE_PRIOR
    heads_tails: TruncatedBetaPrior = HEADS_TAILS_PRIOR
    bff: dict = field(default_factory=dict)


def _parse_grid(text: str) -> np.ndarray:
    text = text.strip()
    if ":" in text:
        lo, hi, n = text.split(":")
        return np.linspace(float(lo), float(hi), int(n))
    return np.array([float(v) for v in text.split(",") if v.strip()])


def load_prior_file(text: str) -> PriorConfig:
    cp = configparser.ConfigParser()
    cp.read_string(text)
    out = PriorConfig()
    for sec in cp.sections():
        if sec not in _PRIOR_SECTIONS:
            raise ValueError(f"unknown priors section [{sec}]")
        bad = set(cp[sec]) - _PRIOR_SECTIONS[sec]
        if bad:
            raise ValueError(f"unknown keys in [{sec}]: {sorted(bad)}")
        items = dict(cp[sec])
        if sec in ("estimation", "testing"):
            cur = getattr(out, sec)
            setattr(out, sec, cur.replace(**{k: parse_prior(v) for k, v in items.items()}))
        elif sec == "learning":
            out.learning = LearningPriors(**{**{k: getattr(out.learning, k) for k in _PRIOR_SECTIONS[sec]},
                                             **{k: parse_prior(v) for k, v in items.items()}})
        elif sec == "binomial":
            for k, v in items.items():
                pr = parse_prior(v)
                if not isinstance(pr, BetaLocation):
                    raise ValueError("binomial priors must be beta(...)")
                setattr(out, k, TruncatedBetaPrior(pr.a, pr.b, pr.lower, pr.upper))
        else:
            bff = {}
            for k, v in items.items():
                if k == "grid":
                    bff["grid"] = _parse_grid(v)
                elif k == "target":
                    bff["target"] = v.strip()
                else:
                    bff.setdefault("fixed", {})[k[len("fixed_"):]] = float(v)
            out.bff = bff
    return out


# -- run configuration and reports ----------------------------------------------

@dataclass
class RunConfig:
    command: str
    input: Optional[str]
    seed: Optional[int]
    settings: dict
    exclude_outliers: Optional[float]
    priors_sha256: Optional[str]
    options: dict

    def digest(self) -> str:
        blob = json.dumps(_jsonable(asdict(self)), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items() if k != "seconds"}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer, int)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        if math.isfinite(x):
            return x
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    if x is None or isinstance(x, str):
        return x
    return str(x)


def _schema() -> dict:
    return json.loads(resources.files("coinbias").joinpath("data/report.schema.json").read_text())


def _versions() -> dict:
    return {"coinbias": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__}


class _Run:
    def __init__(self, cfg: RunConfig, input_sha: Optional[str], out: str):
        self.cfg = cfg
        self.input_sha = input_sha
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.artifacts: list[str] = []
        self.warnings: list[str] = []
        self.converged = True

    def csv(self, name: str, header: Sequence[str], rows) -> None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
        self.text(name, buf.getvalue())

    def text(self, name: str, content: str) -> None:
        (self.out / name).write_text(content, encoding="utf-8")
        self.artifacts.append(name)

    def check(self, draws: PosteriorDraws, label: str) -> None:
        if not draws.converged:
            self.converged = False
        self.warnings += [f"{label}: {w}" for w in draws.warnings]

    def finish(self, results: dict) -> int:
        import jsonschema

        report = _jsonable({
            "command": self.cfg.command,
            "status": "ok" if self.converged else "not_converged",
            "seed": self.cfg.seed,
            "config": asdict(self.cfg),
            "config_hash": self.cfg.digest(),
            "input_sha256": self.input_sha,
            "versions": _versions(),
            "results": results,
            "warnings": self.warnings,
            "artifacts": sorted(self.artifacts + ["report.json"]),
        })
        jsonschema.validate(report, _schema())
        (self.out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return EXIT_OK if self.converged else EXIT_CONVERGENCE


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.10g}"
    return v


def _estimate_rows(draws: PosteriorDraws):
    for n in draws.names:
        m, lo, hi = draws.summary(n)
        yield n, m, lo, hi, draws.rhat.get(n, float("nan")), draws.ess.get(n, float("nan"))


_EST_HEADER = ("parameter", "mean", "ci_low", "ci_high", "rhat", "ess")


# -- argument parsing -----------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--input", help="flip CSV, or 'reconstruction' for the bundled table-based dataset")
    common.add_argument("--seed", type=int)
    common.add_argument("--chains", type=int, default=4)
    common.add_argument("--warmup", type=int, default=2000)
    common.add_argument("--iters", type=int, default=2000)
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--out", default="out")
    common.add_argument("--exclude-outliers", nargs="?", type=float, const=0.53, default=None, metavar="THRESHOLD")
    common.add_argument("--priors", metavar="FILE", help="INI file overriding priors")
    common.add_argument("--lenient", action="store_true", help="collect protocol violations instead of failing")

    p = _Parser(prog="coinbias", description="Same-side and heads-tails bias analyses of coin-flip data.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("ingest", parents=[common], help="validate and normalize a flip CSV")
    s = sub.add_parser("describe", parents=[common], help="per-person or per-coin descriptive table")
    s.add_argument("--by", choices=("person", "coin"), default="person")
    s.add_argument("--interval", choices=("uniform", "exact"), default="uniform",
                   help="uniform-prior credible interval or Clopper-Pearson")
    s = sub.add_parser("test-binomial", parents=[common], help="informed binomial Bayes factor")
    s.add_argument("--kind", choices=("same-side", "heads-tails"), default="same-side")
    s.add_argument("--k", type=int, help="successes (instead of --input)")
    s.add_argument("--n", type=int, help="trials (instead of --input)")
    s = sub.add_parser("fit-hier", parents=[common], help="hierarchical estimation model")
    s.add_argument("--model", type=int, default=1, help="model number 1-16 (1 = all components)")
    s.add_argument("--prior-set", choices=("estimation", "testing"), default="estimation")
    s = sub.add_parser("test-bma", parents=[common], help="16-model averaging with inclusion Bayes factors")
    s.add_argument("--models", help="comma-separated model numbers (default all 16)")
    s = sub.add_parser("fit-learning", parents=[common], help="power-law learning model")
    s.add_argument("--batch-size", type=int, default=100)
    s = sub.add_parser("bff", parents=[common], help="Bayes factor function over normal-moment prior modes")
    s.add_argument("--kind", choices=("same-side", "heads-tails"), default="same-side")
    s.add_argument("--grid", help="'lo:hi:n' or comma list of modes on the logit scale")
    s.add_argument("--hier", action="store_true", help="hierarchical inclusion BF (refits models per grid point)")
    s.add_argument("--target", choices=("same_side", "heads_tails", "person_het", "coin_het"))
    s.add_argument("--allow-expensive", action="store_true")
    sub.add_parser("sites", parents=[common], help="site contrasts on same-side bias")
    s = sub.add_parser("freq", parents=[common], help="exact binomial tests and logistic mixed model")
    s.add_argument("--nodes", type=int, default=25)
    s = sub.add_parser("simulate", parents=[common], help="simulate a flip campaign")
    s.add_argument("--config", required=True, help="INI file with a [simulate] section")
    s = sub.add_parser("recover", parents=[common], help="parameter recovery over simulated replicates")
    s.add_argument("--config", required=True)
    s.add_argument("--replicates", type=int, default=20)
    s.add_argument("--model", choices=("hier", "learning"), default="hier")
    return p


def _load_data(args) -> tuple[FlipDataset, Optional[str], list[str]]:
    if not args.input:
        raise UsageError(f"{args.command} needs --input")
    if args.input == "reconstruction":
        from .tables import reconstruct_dataset
        d, sha = reconstruct_dataset(), None
    else:
        path = Path(args.input)
        if not path.is_file():
            raise UsageError(f"input file not found: {path}")
        raw = path.read_bytes()
        sha = hashlib.sha256(raw).hexdigest()
        d = ingest_csv(io.StringIO(raw.decode("utf-8")), strict=not args.lenient)
    excluded: list[str] = []
    if args.exclude_outliers is not None:
        d, excluded = exclude_outliers(d, args.exclude_outliers)
    return d, sha, excluded


def _settings(args) -> SamplerSettings:
    return SamplerSettings(chains=args.chains, warmup=args.warmup, iters=args.iters, seed=args.seed or 0,
                           threads=args.threads)


# -- commands --------------------------------------------------------------------

def _cmd_ingest(args, run, d, pri):
    buf = io.StringIO()
    write_csv(d, buf)
    run.text("flips.csv", buf.getvalue())
    run.csv("violations.csv", ("row", "person", "sequence", "flip_index", "expected_start", "recorded_start"),
            [(v.row, v.person_id, v.sequence_id, v.flip_index, str(v.expected), str(v.got)) for v in d.violations])
    return {"flips": len(d), "persons": len(d.persons), "coins": len(d.coins), "same_side": d.n_same,
            "heads": d.n_heads, "violations": len(d.violations)}


def _cmd_describe(args, run, d, pri):
    rows = summarize_by(d, args.by, args.interval)
    comb = combined_row(d, args.by, args.interval)
    buf = io.StringIO()
    write_summary_csv(list(rows) + [comb], buf, args.by)
    run.text(f"table_{args.by}.csv", buf.getvalue())
    return {"by": args.by, "interval": args.interval, "units": len(rows),
            "combined": {"k": comb.k, "n": comb.n, "proportion": comb.proportion, "ci95": [comb.ci_low, comb.ci_high]}}


def _cmd_test_binomial(args, run, d, pri):
    if d is not None:
        k, n = (d.n_same if args.kind == "same-side" else d.n_heads), len(d)
    else:
        k, n = args.k, args.n
    if args.kind == "same-side":
        res = bf_informed_binomial(k, n, pri.same_side)
    else:
        pr = pri.heads_tails
        res = (bf_symmetric_binomial(k, n, pr.a, pr.b) if (pr.lower, pr.upper) == (0.0, 1.0)
               else bf_informed_binomial(k, n, pr))
    out = res.to_dict()
    run.csv("binomial.csv", ("test", "k", "n", "log10_bf", "mean", "ci_low", "ci_high"),
            [(out["test"], k, n, out["log10_bf10"], out["mean"], *out["ci95"])])
    return out


def _cmd_fit_hier(args, run, d, pri):
    if not 1 <= args.model <= 16:
        raise ValueError("--model must be between 1 and 16")
    spec = ModelSpec.from_index(args.model)
    priors = pri.estimation if args.prior_set == "estimation" else pri.testing
    draws = sample_posterior(spec, priors, CellData.from_dataset(d), _settings(args))
    run.check(draws, spec.label)
    run.csv("estimates.csv", _EST_HEADER, _estimate_rows(draws))
    rep = fit_report(draws, spec, priors)
    if spec.has_same_side_bias and spec.has_heads_tails_bias:
        rep["probability_scale"] = summarize_probability_scale(draws)
    return rep


def _cmd_test_bma(args, run, d, pri):
    models = None
    if args.models:
        models = [ModelSpec.from_index(int(v)) for v in args.models.split(",")]
    res = run_bma(CellData.from_dataset(d), pri.testing, _settings(args), BridgeSettings(seed=args.seed),
                  models=models)
    for ml, diag in zip(res.mls, res.diagnostics):
        if not diag["max_rhat"] < 1.01:
            run.converged = False
        run.warnings += [f"{ml.model.label}: {w}" for w in diag["warnings"]]
    probs = res.posterior.posterior_probs
    run.csv("models.csv", ("model", "label", "log_ml", "relative_mc_error", "posterior_prob", "max_rhat"),
            [(m.model.index, m.model.label, m.log_ml, m.relative_mc_error, p, g["max_rhat"])
             for m, p, g in zip(res.mls, probs, res.diagnostics)])
    run.csv("inclusion.csv", ("component", "log10_bf"),
            [(k, v / math.log(10)) for k, v in res.log_inclusion.items()])
    out = res.to_dict()
    out["priors"] = pri.testing.describe()
    return out


def _cmd_fit_learning(args, run, d, pri):
    batches = make_batches(d, args.batch_size)
    draws = fit_learning(batches, pri.learning, _settings(args))
    run.check(draws, "learning")
    run.csv("estimates.csv", _EST_HEADER, _estimate_rows(draws))
    t_max = max(b.t for b in batches)
    curve = learning_curve(draws, np.linspace(min(b.t for b in batches), t_max, 300))
    buf = io.StringIO()
    write_curve_csv(curve, buf)
    run.text("curve.csv", buf.getvalue())
    return {"batches": len(batches), "summary": learning_summary(draws), "priors": pri.learning.describe(),
            "diagnostics": draws.diagnostics()}


def _cmd_bff(args, run, d, pri):
    grid = _parse_grid(args.grid) if args.grid else pri.bff.get("grid", DEFAULT_PHI_GRID)
    if args.hier:
        if args.seed is None:
            raise UsageError("bff --hier needs --seed")
        if not args.allow_expensive:
            raise UsageError("bff --hier refits eight models per grid point; add --allow-expensive")
        target = args.target or pri.bff.get("target", "same_side")
        g = bff_hier(target, grid, pri.bff.get("fixed"), CellData.from_dataset(d), _settings(args),
                     BridgeSettings(seed=args.seed), allow_expensive=args.allow_expensive)
        run.warnings += [f"phi={k}: {v}" for k, v in g.errors.items()]
    else:
        k = d.n_same if args.kind == "same-side" else d.n_heads
        g = bff_nonhier(k, len(d), grid, args.kind)
    buf = io.StringIO()
    write_bff_csv(g, buf)
    run.text("bff.csv", buf.getvalue())
    i = g.argmax()
    return {"kind": g.kind, "max_log10_bf": g.max_log10_bf, "argmax_phi": float(g.phi[i]),
            "argmax_mode_probability": float(g.mode_probability[i]),
            "grid": [{"phi": p, "mode_probability": m, "log10_bf": b} for p, m, b in g.rows()]}


def _cmd_sites(args, run, d, pri):
    sc = fit_site_contrasts(CellData.from_dataset(d), priors=pri.estimation, settings=_settings(args))
    run.check(sc.draws, "sites")
    summ = sc.summary()
    run.csv("sites.csv", ("site", "persons", "mean", "ci_low", "ci_high", "single_person"),
            [(s, sc.persons_per_site[s], summ[s]["mean"], *summ[s]["ci95"], s in sc.flagged) for s in sc.sites])
    return {"sites": summ, "persons_per_site": sc.persons_per_site, "single_person_sites": sc.flagged,
            "diagnostics": sc.draws.diagnostics()}


def _cmd_freq(args, run, d, pri):
    n = len(d)
    p_heads = exact_binomial_p(d.n_heads, n)
    p_same = exact_binomial_p(d.n_same, n)
    try:
        g = ml_fit_random_intercept(CellData.from_dataset(d), args.nodes)
    except GLMMConvergenceError:
        run.converged = False
        raise
    run.csv("freq.csv", ("test", "statistic", "estimate", "se", "p_value"),
            [("binomial_heads", d.n_heads, d.n_heads / n, "", p_heads),
             ("binomial_same_side", d.n_same, d.n_same / n, "", p_same),
             ("glmm_intercept", g.z, g.b_mu, g.se, g.p),
             ("glmm_start_side", g.b_start / g.se_start if g.se_start else "", g.b_start, g.se_start, g.p_start),
             ("glmm_lr_tau", g.lr_chi2, g.tau, "", g.lr_p)])
    return {"exact_binomial": {"heads": {"k": d.n_heads, "n": n, "p": p_heads},
                               "same_side": {"k": d.n_same, "n": n, "p": p_same}},
            "glmm": g.to_dict()}


def _cmd_simulate(args, run, d, pri):
    params = sim_params_from_ini(Path(args.config).read_text(), args.seed)
    data = simulate(uniform_config(**params))
    buf = io.StringIO()
    write_csv(data, buf)
    run.text("flips.csv", buf.getvalue())
    return {"params": params, "flips": len(data), "same_side": data.n_same, "heads": data.n_heads}


def _cmd_recover(args, run, d, pri):
    base = sim_params_from_ini(Path(args.config).read_text(), args.seed)
    reports, rows = [], []
    for r in range(args.replicates):
        params = {**base, "seed": base["seed"] + r}
        data = simulate(uniform_config(**params))
        s = SamplerSettings(args.chains, args.warmup, args.iters, params["seed"], args.threads)
        if args.model == "hier":
            draws = sample_posterior(ModelSpec(True, True, True, True), pri.estimation,
                                     CellData.from_dataset(data), s)
            truth = {"beta_mu": params.get("theta", 0.5), "alpha_mu": params.get("alpha", 0.5)}
            if params.get("sigma_theta", 0.0) > 0:
                truth["sigma_beta"] = params["sigma_theta"]
        else:
            draws = fit_learning(make_batches(data), pri.learning, s)
            truth = {"theta_mu": params.get("theta", 0.5), "lambda_mu": params.get("lambda_", 0.5),
                     "rho_mu": params.get("rho", 0.0)}
        run.check(draws, f"replicate {r}")
        rep = recovery_report(truth, {k: draws.summary(k) for k in truth})
        reports.append(rep)
        rows += [(r, x.parameter, x.truth, x.mean, x.ci_low, x.ci_high, x.covered) for x in rep]
    run.csv("recovery.csv", ("replicate", "parameter", "truth", "mean", "ci_low", "ci_high", "covered"), rows)
    return {"model": args.model, "replicates": args.replicates, "coverage": coverage_table(reports)}


_COMMANDS = {
    "ingest": _cmd_ingest, "describe": _cmd_describe, "test-binomial": _cmd_test_binomial,
    "fit-hier": _cmd_fit_hier, "test-bma": _cmd_test_bma, "fit-learning": _cmd_fit_learning, "bff": _cmd_bff,
    "sites": _cmd_sites, "freq": _cmd_freq, "simulate": _cmd_simulate, "recover": _cmd_recover,
}
_NO_DATA = {"simulate", "recover"}


def _run(argv) -> int:
    args = _build_parser().parse_args(argv)
    if args.command in STOCHASTIC and args.seed is None:
        raise UsageError(f"{args.command} is stochastic and needs --seed")
    for name in ("chains", "warmup", "iters", "threads"):
        if getattr(args, name) < 1:
            raise UsageError(f"--{name} must be positive")
    prior_text = None
    if args.priors:
        path = Path(args.priors)
        if not path.is_file():
            raise UsageError(f"priors file not found: {path}")
        prior_text = path.read_text()
    pri = load_prior_file(prior_text) if prior_text else PriorConfig()
    if getattr(args, "config", None) and not Path(args.config).is_file():
        raise UsageError(f"config file not found: {args.config}")

    d, sha, excluded = None, None, []
    if args.command == "test-binomial" and not args.input:
        if args.k is None or args.n is None:
            raise UsageError("test-binomial needs --input or both --k and --n")
    elif args.command not in _NO_DATA:
        d, sha, excluded = _load_data(args)
    if getattr(args, "config", None):
        sha = hashlib.sha256(Path(args.config).read_bytes()).hexdigest()

    options = {k: v for k, v in vars(args).items()
               if k not in {"command", "input", "seed", "chains", "warmup", "iters", "threads", "out",
                            "exclude_outliers", "priors"}}
    cfg = RunConfig(args.command, args.input, args.seed,
                    {"chains": args.chains, "warmup": args.warmup, "iters": args.iters, "threads": args.threads},
                    args.exclude_outliers,
                    hashlib.sha256(prior_text.encode()).hexdigest() if prior_text else None, options)
    run = _Run(cfg, sha, args.out)
    results = _COMMANDS[args.command](args, run, d, pri)
    if excluded:
        results = {**results, "excluded_persons": excluded}
    return run.finish(results)


def main(argv: Optional[Sequence[str]] = None) -> int:
    import warnings

    from .mcmc import ConvergenceWarning

    warnings.simplefilter("ignore", ConvergenceWarning)  # surfaced through the report and exit status
    try:
        return _run(list(sys.argv[1:] if argv is None else argv))
    except UsageError as e:
        print(f"coinbias: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (GLMMConvergenceError, BridgeError, QuadratureError) as e:
        print(f"coinbias: convergence failure: {e}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except (ParseError, IntegrityError, ProtocolError, DomainError, DegeneratePriorError, ValueError, KeyError,
            configparser.Error) as e:
        print(f"coinbias: invalid input: {e}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
