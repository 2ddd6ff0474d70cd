"""Command-line driver: privfl {params,mech-test,simulate,recon,account}.

Numbers in CSV output carry 17 significant digits; every subcommand is
deterministic under a fixed --seed, and the exit code is 0 only when all
requested checks pass.
"""

import argparse
import csv
import datetime
import hashlib
import json
import math
import os
import sys

import numpy as np

from . import accountant, fedsim, logreg_exp, privunit, privunit_inf, reconguard, scalarmech, separated

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


def _fmt(x):
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    if isinstance(x, str):
        return x
    return format(float(x), ".17g")


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _print_table(header, rows):
    print("\t".join(header))
    for row in rows:
        print("\t".join(format(v, ".6g") if isinstance(v, float) else str(v) for v in row))


# ---------------------------------------------------------------- params

def _direction_params(eps1, d, split):
    if split == "theory":
        return privunit.make_params(d, privunit.solve_gamma(eps1, d), 0.5, eps_direction=eps1)
    if split == "experiment":
        return privunit.params_for_eps(0.99 * eps1, 0.01 * eps1, d)
    # logistic: eps1 is the whole budget, the direction gets 13/16 + 1/16 of it
    return privunit.params_for_eps(13.0 * eps1 / 16.0, eps1 / 16.0, d)


def cmd_params(args):
    header = ("eps1", "d", "split", "gamma", "p", "m", "inv_m", "certified_eps")
    rows = []
    for eps1 in args.eps1:
        try:
            pp = _direction_params(eps1, args.d, args.split)
        except (privunit.InvalidParams, ValueError) as exc:
            print(f"infeasible parameters for --eps1 {eps1} --d {args.d}: {exc}", file=sys.stderr)
            return 2
        rows.append((eps1, args.d, args.split, pp.gamma, pp.p, pp.m, 1.0 / pp.m,
                     privunit.verify_privacy_ratio(pp)))
    _print_table(header, rows)
    if args.out:
        _write_csv(args.out, header, rows)
    return 0


# ---------------------------------------------------------------- mech-test

def _mc_band(z, target, sigmas=4.0):
    mean = z.mean(axis=0)
    se = z.std(axis=0, ddof=1) / math.sqrt(len(z))
    worst = float(np.max(np.abs(mean - target) / np.maximum(se, 1e-300)))
    return worst, worst <= sigmas


def cmd_mech_test(args):
    rng = np.random.default_rng(args.seed)
    report = []
    ok = True
    if args.mech == "privunit":
        pp = privunit.make_params(args.d, privunit.solve_gamma(args.eps, args.d), 0.5, eps_direction=args.eps)
        u = rng.standard_normal(args.d)
        u /= np.linalg.norm(u)
        z = np.concatenate([privunit.sample(u, pp, rng, n=c) for c in _chunks(args.n)])
        worst, good = _mc_band(z, u, args.sigmas)
        ratio = privunit.verify_privacy_ratio(pp)
        report += [("max |bias| / se", worst, good), ("privacy ratio", ratio, ratio <= args.eps + 1e-9)]
    elif args.mech == "privunitinf":
        pp = privunit_inf.params_for_eps_inf(args.eps, 0.0, args.d)
        u = rng.uniform(-1, 1, args.d)
        corners = np.array(np.meshgrid(*[[-1.0, 1.0]] * args.d, indexing="ij")).reshape(args.d, -1).T
        weights = np.prod(np.where(corners > 0, (1 + u) / 2, (1 - u) / 2), axis=1)
        mean = sum(w * privunit_inf.exact_mean_given_corner(c, pp) for w, c in zip(weights, corners)) / pp.m
        err = float(np.max(np.abs(mean - u)))
        ratio = privunit_inf.verify_privacy_ratio_inf(pp)
        report += [("max |E[Z] - u| (exact)", err, err <= 1e-12), ("privacy ratio", ratio, ratio <= args.eps + 1e-9)]
    elif args.mech == "scalardp":
        sp = scalarmech.make_scalar_dp(args.eps, args.r_max, k=args.k)
        worst_bias, worst_slack = 0.0, -math.inf
        for r in np.linspace(0, args.r_max, 33):
            vals, probs = scalarmech.output_distribution(r, sp)
            mean = probs @ vals
            var = probs @ (vals - mean) ** 2
            worst_bias = max(worst_bias, abs(mean - r))
            worst_slack = max(worst_slack, var - scalarmech.variance_bound(r, sp))
        ratio = scalarmech.rr_privacy_ratio(sp.k, sp.eps)
        report += [("max |bias| (exact)", worst_bias, worst_bias <= 1e-12 * args.r_max),
                   ("max variance - bound", worst_slack, worst_slack <= 0),
                   ("privacy ratio", ratio, ratio <= args.eps + 1e-9)]
    elif args.mech == "scalarreldp":
        sp = scalarmech.make_scalar_rel_dp(args.eps, args.alpha, args.nu, args.r_max, k=args.k)
        bound = scalarmech.relative_mse_bound(sp)
        worst_bias = worst_rel = 0.0
        for r in np.linspace(0, args.r_max, 33):
            vals, probs = scalarmech.rel_output_distribution(r, sp)
            worst_bias = max(worst_bias, abs(probs @ vals - r))
            worst_rel = max(worst_rel, probs @ (vals - r) ** 2 / max(r, sp.alpha) ** 2)
        report += [("max |bias| (exact)", worst_bias, worst_bias <= 1e-12 * args.r_max),
                   ("max relative MSE", worst_rel, worst_rel <= bound)]
    else:  # separated
        mech = separated.build_theory(args.eps, args.eps2, args.d, args.r_max)
        w = rng.standard_normal(args.d)
        w *= 0.5 * args.r_max / np.linalg.norm(w)
        z = np.concatenate([separated.privatize(np.tile(w, (c, 1)), mech, rng) for c in _chunks(args.n)])
        worst, good = _mc_band(z, w, args.sigmas)
        cert = separated.certified_eps(mech)
        report += [("max |bias| / se", worst, good), ("certified eps", cert, cert <= mech.eps_total + 1e-9)]
    for name, value, good in report:
        print(f"{'PASS' if good else 'FAIL'}\t{name}\t{value:.6g}")
        ok &= bool(good)
    return 0 if ok else 1


def _chunks(n, size=200_000):
    return [min(size, n - lo) for lo in range(0, n, size)]


# ---------------------------------------------------------------- simulate

CSV_SCHEMA_VERSION = 1  # bump when a CSV column is added, removed or renamed

LOGREG_KEYS = {
    "experiment": str, "seed": int, "d": int, "n_samples": int, "tau_signal": float,
    "eps_local_total_grid": list, "reps": int, "n_eval": int, "eval_seed": int, "beta": float,
    "eta0_nonprivate": float, "checkpoints": int, "workers": int,
}
FEDSIM_KEYS = {
    "experiment": str, "seed": int, "d": int, "rounds": int, "n_clients": int, "points_per_client": int,
    "client_spread": float, "sample_prob_q": float, "local_steps": int, "eta_local": float,
    "eta_server": float, "clip_rho_update_units": float, "sigma_update_units": float,
    "update_rule": str, "normalize_by": str, "split": str, "eps_local_total": float,
    "eps_direction_local": float, "eps_magnitude_local": float, "r_max_update_units": float,
    "record_wallclock": bool, "workers": int,
}
FEDSIM_DEFAULTS = {
    "seed": 0, "d": 10, "rounds": 50, "n_clients": 100, "points_per_client": 20, "client_spread": 1.0,
    "sample_prob_q": 0.1, "local_steps": 1, "eta_local": 1.0, "eta_server": 1.0,
    "clip_rho_update_units": 1.0, "sigma_update_units": 0.0, "update_rule": "gradient",
    "normalize_by": "expected", "split": "none", "r_max_update_units": 1.0,
    "record_wallclock": False, "workers": 1,
}


def _as_eps(v):
    if isinstance(v, str) and v.strip().lower() in ("inf", "infinity"):
        return math.inf
    return float(v)


def validate_config(raw):
    """Check every key before any compute; raises ValueError listing all problems."""
    problems = []
    kind = raw.get("experiment")
    if kind not in ("logreg", "fedsim"):
        raise ValueError(f"experiment must be 'logreg' or 'fedsim', got {kind!r}")
    schema = LOGREG_KEYS if kind == "logreg" else FEDSIM_KEYS
    for key in raw:
        if key not in schema:
            problems.append(f"unknown key {key!r}")
    for key, typ in schema.items():
        if key not in raw:
            continue
        v = raw[key]
        if typ is float and isinstance(v, (int, float)) and not isinstance(v, bool):
            continue
        if typ is float and key.startswith("eps") and isinstance(v, str):
            continue
        if not isinstance(v, typ) or (typ is int and isinstance(v, bool)):
            problems.append(f"{key} should be {typ.__name__}, got {type(v).__name__}")
    if problems:
        raise ValueError("; ".join(problems))
    if kind == "logreg":
        grid = raw.get("eps_local_total_grid", list(logreg_exp.SuiteConfig.eps_grid))
        try:
            grid = tuple(_as_eps(e) for e in grid)
        except (TypeError, ValueError):
            raise ValueError("eps_local_total_grid entries must be numbers or 'inf'")
        fields = dict(raw)
        fields.pop("experiment")
        fields["eps_grid"] = grid
        fields.pop("eps_local_total_grid", None)
        if "n_samples" in fields:
            fields["N"] = fields.pop("n_samples")
        return kind, logreg_exp.SuiteConfig(**fields)
    cfg = dict(FEDSIM_DEFAULTS)
    cfg.update({k: v for k, v in raw.items() if k != "experiment"})
    if cfg["split"] not in ("none", "logistic", "theory", "experiment"):
        problems.append("split must be none, logistic, theory or experiment")
    if cfg["split"] == "logistic" and "eps_local_total" not in cfg:
        problems.append("split 'logistic' needs eps_local_total")
    if cfg["split"] in ("theory", "experiment") and not {"eps_direction_local", "eps_magnitude_local"} <= set(cfg):
        problems.append("split needs eps_direction_local and eps_magnitude_local")
    for key in ("d", "rounds", "n_clients", "points_per_client", "local_steps", "workers"):
        if cfg[key] < 1:
            problems.append(f"{key} must be at least 1")
    if not 0 < cfg["sample_prob_q"] <= 1:
        problems.append("sample_prob_q must lie in (0, 1]")
    for key in ("eta_local", "eta_server", "clip_rho_update_units", "r_max_update_units"):
        if cfg[key] <= 0:
            problems.append(f"{key} must be positive")
    if cfg["sigma_update_units"] < 0:
        problems.append("sigma_update_units must be nonnegative")
    if cfg["update_rule"] not in ("gradient", "prox_point"):
        problems.append("update_rule must be gradient or prox_point")
    if cfg["normalize_by"] not in ("expected", "realized"):
        problems.append("normalize_by must be expected or realized")
    if problems:
        raise ValueError("; ".join(problems))
    return kind, cfg


def _fedsim_mechanism(cfg):
    d, r_max = cfg["d"], cfg["r_max_update_units"]
    if cfg["split"] == "none":
        return fedsim.PassThrough()
    if cfg["split"] == "logistic":
        return separated.build_logistic_split(_as_eps(cfg["eps_local_total"]), d, r_max)
    build = separated.build_theory if cfg["split"] == "theory" else separated.build_experiment
    return build(_as_eps(cfg["eps_direction_local"]), _as_eps(cfg["eps_magnitude_local"]), d, r_max)


def run_fedsim(cfg, outdir):
    shards, theta_star, evaluate = fedsim.make_quadratic_problem(
        cfg["n_clients"], cfg["points_per_client"], cfg["d"], cfg["seed"], cfg["client_spread"])
    round_cfg = fedsim.FedRoundConfig(
        N=cfg["n_clients"], q=cfg["sample_prob_q"], local_steps=cfg["local_steps"],
        eta_local=cfg["eta_local"], eta_server=cfg["eta_server"], rho=cfg["clip_rho_update_units"],
        sigma=cfg["sigma_update_units"], update_rule=cfg["update_rule"], mech=_fedsim_mechanism(cfg),
        normalize_by=cfg["normalize_by"])
    _, metrics, acct = fedsim.run(cfg["rounds"], round_cfg, shards, cfg["seed"], fedsim.QuadraticLoss(),
                                  np.zeros(cfg["d"]), workers=cfg["workers"], evaluate=evaluate,
                                  theta_star=theta_star, record_wallclock=cfg["record_wallclock"])
    path = os.path.join(outdir, "metrics.csv")
    fedsim.write_metrics_csv(path, metrics)
    paths = {"metrics": path}
    if acct is not None:
        path = os.path.join(outdir, "accountant.csv")
        _write_csv(path, ("round", "eps_renyi_total"), [(i + 1, v) for i, v in enumerate(acct.history)])
        paths["accountant"] = path
    return paths


def git_blob_hash(data):
    """The hash git would give the config file's contents."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def cmd_simulate(args):
    with open(args.config, "rb") as fh:
        data = fh.read()
    try:
        raw = yaml_or_toml(args.config, data)
        if args.seed is not None:
            raw["seed"] = args.seed
        if args.threads is not None:
            raw["workers"] = args.threads
        if args.eps is not None and raw.get("experiment") == "logreg":
            raw["eps_local_total_grid"] = [args.eps]
        kind, cfg = validate_config(raw)
    except (ValueError, TypeError) as exc:
        print(f"invalid config {args.config}: {exc}", file=sys.stderr)
        return 2
    os.makedirs(args.out, exist_ok=True)
    started = datetime.datetime.now(datetime.timezone.utc).isoformat()
    if kind == "logreg":
        results, oracle = logreg_exp.run_experiment_suite(cfg)
        paths = logreg_exp.write_suite_csvs(results, oracle, args.out, logreg_exp.suite_tasks(cfg))
        seed = cfg.seed
    else:
        paths = run_fedsim(cfg, args.out)
        seed = cfg["seed"]
    files = {}
    for name, path in paths.items():
        with open(path, "rb") as fh:
            files[os.path.basename(path)] = hashlib.sha256(fh.read()).hexdigest()
    manifest = {
        "command": "simulate", "csv_schema_version": CSV_SCHEMA_VERSION,
        "config_path": os.path.abspath(args.config), "master_seed": seed,
        "config_hash": git_blob_hash(data), "output_dir": os.path.abspath(args.out),
        "overrides": {"seed": args.seed, "threads": args.threads, "eps": args.eps},
        "started_utc": started, "finished_utc": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "files_sha256": files,
    }
    with open(os.path.join(args.out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    for name in sorted(files):
        print(os.path.join(args.out, name))
    return 0


def yaml_or_toml(path, data):
    if path.endswith((".yaml", ".yml")):
        import yaml
        return yaml.safe_load(data)
    return tomllib.loads(data.decode())


# ---------------------------------------------------------------- recon

def cmd_recon(args):
    try:
        if args.target == "sphere":
            q = reconguard.ReconSphereQuery(args.k, args.a, args.rho0, args.eps)
            near, far = reconguard.breach_log_bounds(q)
            rows = [("breach_bound", reconguard.breach_prob_sphere(q)),
                    ("log_bound_small_a", near if near is not None else math.nan),
                    ("log_bound_large_a", far if far is not None else math.nan)]
        else:
            q = reconguard.ZipfQuery(args.d, args.m, args.gamma_pred, args.p, args.r)
            rows = [("precision_bound", reconguard.zipf_precision_bound(q, args.denominator)),
                    ("recall_bound", reconguard.zipf_recall_bound(q)),
                    ("recall_margin", reconguard.recall_margin(q))]
    except ValueError as exc:
        print(f"recon: {exc}", file=sys.stderr)
        return 2
    _print_table(("quantity", "value"), rows)
    if args.out:
        _write_csv(args.out, ("quantity", "value"), rows)
    return 0


# ---------------------------------------------------------------- account

def cmd_account(args):
    rows = []
    try:
        total = args.eps_renyi
        if args.T is not None and args.q is not None and args.rho is not None:
            if args.sigma is not None:
                total = args.T * accountant.renyi2_per_round(args.q, args.rho, args.sigma)
                rows.append(("eps_renyi_total", total))
            elif args.eps_renyi is not None:
                rows += [("sigma", accountant.sigma_for_budget(args.T, args.q, args.rho, args.eps_renyi)),
                         ("sigma_linearized", accountant.sigma_linearized(args.T, args.q, args.rho, args.eps_renyi)),
                         ("sigma_approx", accountant.sigma_approx(args.T, args.q, args.rho, args.eps_renyi))]
            if not accountant.approximation_valid(args.q, args.lam):
                print("warning: q * lambda > 0.1, closed forms are loose", file=sys.stderr)
        if args.to_dp:
            if total is None:
                raise ValueError("--to-dp needs --eps-renyi or (--T, --q, --rho, --sigma)")
            rows.append(("eps_dp", accountant.renyi_to_dp(total, args.lam, args.delta)))
    except ValueError as exc:
        print(f"account: {exc}", file=sys.stderr)
        return 2
    if not rows:
        print("account: nothing to compute; see --help", file=sys.stderr)
        return 2
    _print_table(("quantity", "value"), rows)
    if args.out:
        _write_csv(args.out, ("quantity", "value"), rows)
    return 0


# ---------------------------------------------------------------- parser

def build_parser():
    ap = argparse.ArgumentParser(prog="privfl")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("params", help="cap threshold, cap probability and norm constant")
    p.add_argument("--eps1", type=float, nargs="+", required=True,
                   help="direction budget (the whole budget for --split logistic)")
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--split", choices=("theory", "experiment", "logistic"), default="experiment")
    p.add_argument("--out")
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("mech-test", help="bias, variance and privacy-ratio checks")
    p.add_argument("--mech", choices=("privunit", "privunitinf", "scalardp", "scalarreldp", "separated"),
                   required=True)
    p.add_argument("--d", type=int, default=20)
    p.add_argument("--eps", type=float, default=4.0)
    p.add_argument("--eps2", type=float, default=3.0, help="magnitude budget for --mech separated")
    p.add_argument("--n", type=int, default=10**6)
    p.add_argument("--k", type=int)
    p.add_argument("--r-max", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--nu", type=float, default=2.0)
    p.add_argument("--sigmas", type=float, default=4.0, help="Monte Carlo band width in standard errors")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_mech_test)

    p = sub.add_parser("simulate", help="run an experiment from a TOML or YAML config")
    p.add_argument("config")
    p.add_argument("--out", default="runs/out")
    p.add_argument("--threads", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--eps", type=_as_eps, help="run a single budget (inf for non-private)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("recon", help="reconstruction breach bounds")
    p.add_argument("--target", choices=("sphere", "zipf"), default="sphere")
    p.add_argument("--k", type=int, default=64)
    p.add_argument("--a", type=float, default=0.5)
    p.add_argument("--eps", type=float, default=0.0)
    p.add_argument("--rho0", type=float, default=0.0)
    p.add_argument("--d", type=int, default=10_000)
    p.add_argument("--m", type=int, default=100)
    p.add_argument("--gamma-pred", type=float, default=2.0)
    p.add_argument("--p", type=float, default=0.5)
    p.add_argument("--r", type=float, default=0.5)
    p.add_argument("--denominator", choices=("proof", "statement"), default="proof")
    p.add_argument("--out")
    p.set_defaults(func=cmd_recon)

    p = sub.add_parser("account", help="Renyi accounting for the noisy aggregate")
    p.add_argument("--T", type=int)
    p.add_argument("--q", type=float)
    p.add_argument("--rho", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--eps-renyi", type=float)
    p.add_argument("--to-dp", action="store_true")
    p.add_argument("--lambda", dest="lam", type=float, default=2.0)
    p.add_argument("--delta", type=float, default=1e-9)
    p.add_argument("--out")
    p.set_defaults(func=cmd_account)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
