"""Configuration-driven experiment runner and bound calculator.

Subcommands: ``bounds``, ``allocate``, ``fig1``, ``fig2``, ``adaptive``,
``validate``.  Experiment commands read an optional flat config file
(TOML-style ``[section]`` headers over ``key = value`` lines), let flags
override it, and drop a manifest next to every CSV capturing the exact
resolved configuration so a run can be reproduced from its outputs alone.

All randomness flows from a single base seed (flag ``--seed``, env var
``FPLD_SEED``, default 0) through keyed substreams; reruns with the same
resolved configuration produce byte-identical CSVs regardless of
``--jobs``.

Exit codes: 0 ok, 1 property/parameter failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from scipy import stats as sstats

from . import __version__, adaptive, alloc, quant, sim, svgplot
from .bounds import (
    BoundParams,
    BoundEstimates,
    check_small_error,
    het_bandwidth_term,
    lower_bound_fpld,
    upper_bound_homogeneous,
)
from .simplex import cumulant_kl_exact, kl, softmax

class UsageError(ValueError):
    """Missing or mutually inconsistent command arguments (exit code 2)."""


# ---------------------------------------------------------------------------
# Flat config files


def parse_config_text(text: str) -> dict:
    """Parse ``[section]`` / ``key = value`` lines.

    Values: integers, floats (``inf`` allowed), booleans, quoted or bare
    strings, and ``[a, b, c]`` lists.  Keys outside any section land in
    section ``""``.
    """
    sections: dict[str, dict] = {"": {}}
    current = ""
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            sections.setdefault(current, {})
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        sections[current][key.strip().replace("-", "_")] = _parse_value(value.strip(), lineno)
    return sections


def _parse_value(token: str, lineno: int):
    if token.startswith("[") and token.endswith("]"):
        inner = token[1:-1].strip()
        if not inner:
            return []
        return [_parse_value(part.strip(), lineno) for part in inner.split(",")]
    if token.startswith('"') and token.endswith('"') and len(token) >= 2:
        return token[1:-1]
    low = token.lower()
    if low == "true":
        return True
    if low == "false":
        return False
    try:
        return int(token)
    except ValueError:
        pass
    try:
        return float(token)  # handles inf/nan spellings too
    except ValueError:
        return token  # bare string


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, str):
        return f'"{value}"'
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_format_value(v) for v in value) + "]"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def load_config(path) -> dict:
    return parse_config_text(Path(path).read_text())


def write_manifest(path, subcommand: str, resolved: dict) -> None:
    lines = [
        "[meta]",
        f'tool_version = "{__version__}"',
        f'subcommand = "{subcommand}"',
        f'created = "{datetime.now(timezone.utc).isoformat()}"',
        "",
        f"[{subcommand}]",
    ]
    for key, value in resolved.items():
        if value is None:
            continue
        lines.append(f"{key} = {_format_value(value)}")
    Path(path).write_text("\n".join(lines) + "\n")


def _resolve_settings(defaults: dict, args, config_section: str) -> dict:
    """defaults <- config file section <- explicit CLI flags."""
    settings = dict(defaults)
    if getattr(args, "config", None):
        cfg = load_config(args.config)
        merged = {**cfg.get("", {}), **cfg.get(config_section, {})}
        for key, value in merged.items():
            if key not in settings:
                raise ValueError(f"unknown config key {key!r} for [{config_section}]")
            settings[key] = value
    for key in settings:
        flag = getattr(args, key, None)
        if flag is not None:
            settings[key] = flag
    return settings


def _env_seed() -> int:
    return int(os.environ.get("FPLD_SEED", "0"))


def _seed_list(base: int, count: int) -> tuple:
    return tuple(base + i for i in range(count))


def _parse_float_list(text: str) -> tuple:
    return tuple(float(x) for x in text.split(","))


# ---------------------------------------------------------------------------
# bounds


def cmd_bounds(args) -> int:
    defaults = dict(
        d=1.0, K=4, n=30000.0, m=64, V=256, delta=0.05, rho=1.0, L=1.0,
        c1=1.0, c2=1.0, c3=None, eps_opt=0.0, eps_fit=0.0, cp=1.0, T=1,
        c0=1.0, bits_per_coord=None, B=None, B_list=None, L_list=None,
    )
    s = _resolve_settings(defaults, args, "bounds")
    if s["B_list"] is not None:
        B = tuple(float(b) for b in (
            _parse_float_list(s["B_list"]) if isinstance(s["B_list"], str) else s["B_list"]
        ))
    elif s["B"] is not None:
        B = float(s["B"])
    elif s["bits_per_coord"] is not None:
        B = float(s["bits_per_coord"]) * s["V"]
    else:
        raise UsageError("provide --bits-per-coord, --B, or --B-list")
    L = s["L"]
    if s["L_list"] is not None:
        L = tuple(float(x) for x in (
            _parse_float_list(s["L_list"]) if isinstance(s["L_list"], str) else s["L_list"]
        ))
    params = BoundParams(
        d=s["d"], K=int(s["K"]), n=float(s["n"]), m=int(s["m"]), V=int(s["V"]),
        B=B, delta=s["delta"], rho=s["rho"], L=L, c1=s["c1"], c2=s["c2"],
        c3=s["c3"], eps_opt=s["eps_opt"], eps_fit=s["eps_fit"], cp=s["cp"],
        T=int(s["T"]), c0=s["c0"],
    )
    if params.heterogeneous:
        bw = het_bandwidth_term(params)
        stat = 0.0 if math.isinf(params.n) else params.c1 * params.d / (params.K * params.n)
        probe = params.c2 * params.rho * math.sqrt(
            params.V * math.log(params.V / params.delta) / params.m)
        slack = params.eps_opt + params.eps_fit
        se_ok, sep_ok = check_small_error(params)
        est = BoundEstimates(stat, probe, bw, slack, stat + probe + bw + slack,
                             se_ok, sep_ok)
        lower = None
    else:
        est = upper_bound_homogeneous(params)
        lower = lower_bound_fpld(params)

    rows = [
        ("statistical_term", est.statistical_term),
        ("probe_term", est.probe_term),
        ("bandwidth_term", est.bandwidth_term),
        ("slack_term", est.slack_term),
        ("total_upper", est.total),
    ]
    if lower is not None:
        rows.append(("lower_bound", lower))
    width = max(len(name) for name, _ in rows)
    for name, value in rows:
        print(f"{name:<{width}}  {value:.6e}")
    print(f"{'SE_satisfied':<{width}}  {est.se_ok}")
    print(f"{'SE_prime_satisfied':<{width}}  {est.se_prime_ok}")
    print("constants c1, c2 are illustrative (configuration, default 1.0)")
    if args.out:
        names = [name for name, _ in rows] + ["SE_satisfied", "SE_prime_satisfied"]
        values = [repr(v) for _, v in rows] + [str(est.se_ok), str(est.se_prime_ok)]
        Path(args.out).write_text(",".join(names) + "\n" + ",".join(values) + "\n")
    return 0


# ---------------------------------------------------------------------------
# allocate


def cmd_allocate(args) -> int:
    defaults = dict(w=None, B_tot=None, V=256, B_max=None)
    s = _resolve_settings(defaults, args, "allocate")
    if s["w"] is None or s["B_tot"] is None:
        raise UsageError("provide --w and --Btot")
    w = np.asarray(
        _parse_float_list(s["w"]) if isinstance(s["w"], str) else s["w"], dtype=float
    )
    V = int(s["V"])
    B_tot = float(s["B_tot"])
    B_max = None if s["B_max"] is None else float(s["B_max"])
    plan = alloc.waterfill_clipped(w, B_tot, V, B_max)
    bits = alloc.integerize(plan, V)
    int_B = bits.astype(float) * V
    print(f"weights        : {', '.join(repr(float(x)) for x in w)}")
    print(f"B_i (real)     : {', '.join(f'{b:.6g}' for b in plan.B)}")
    print(f"bits/coord     : {', '.join(str(int(b)) for b in bits)}")
    print(f"B_i (integer)  : {', '.join(f'{b:.6g}' for b in int_B)}")
    print(f"F(real plan)   : {alloc.objective_F(plan.B, w, V):.6e}")
    print(f"F(integer plan): {alloc.objective_F(int_B, w, V):.6e}")
    if plan.saturated.any():
        print(f"saturated nodes: {np.flatnonzero(plan.saturated).tolist()}")
    return 0


# ---------------------------------------------------------------------------
# experiment commands


_FIG1_DEFAULTS = dict(
    V=256, n=30000.0, m=64, clip=1.0, truth_scale=0.25, delta=0.05, d=1.0,
    K_values=[2, 4, 8, 16], bits_at_K_sweep=4,
    bits_values=[2, 3, 4, 5, 6, 7, 8], K_at_bits_sweep=4,
    seed=None, seeds=30,
)

_FIG2_DEFAULTS = dict(
    V=256, K=4, n=30000.0, m=64, clips=[1.0, 1.0, 4.0, 4.0], weights=None,
    truth_scale=0.25, delta=0.05, d=1.0,
    budgets_per_coord=[8.0, 12.0, 16.0, 20.0],
    policies=["optimal", "uniform", "inverse"],
    seed=None, seeds=100,
)

_ADAPTIVE_DEFAULTS = dict(
    V=256, K=4, n=30000.0, m=64, clips=[1.0, 1.0, 4.0, 4.0],
    truth_scale=0.25, delta=0.05, budget_per_coord=8.0, B_max_per_coord=None,
    T0=1, oracle_weights=None, seed=None, seeds=100,
)


def _finish_experiment(args, result, subcommand: str, resolved: dict,
                       plot_series=None, plot_kwargs=None) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{subcommand}.csv"
    result.write_csv(csv_path)
    write_manifest(out_dir / f"{subcommand}.manifest.toml", subcommand, resolved)
    print(f"wrote {csv_path}")
    if args.plot and plot_series:
        for name, (series, kwargs) in plot_series.items():
            svg_path = out_dir / f"{name}.svg"
            svgplot.plot_lines(svg_path, series, **kwargs)
            print(f"wrote {svg_path}")
    return 0


def _common_resolution(args, defaults, section):
    s = _resolve_settings(defaults, args, section)
    base = _env_seed() if s["seed"] is None else int(s["seed"])
    s["seed"] = base
    s["n"] = float(s["n"])
    return s


def cmd_fig1(args) -> int:
    s = _common_resolution(args, _FIG1_DEFAULTS, "fig1")
    cfg = sim.Fig1Config(
        V=int(s["V"]), n=s["n"], m=int(s["m"]), clip=float(s["clip"]),
        truth_scale=float(s["truth_scale"]), delta=float(s["delta"]), d=float(s["d"]),
        K_values=tuple(int(k) for k in s["K_values"]),
        bits_at_K_sweep=int(s["bits_at_K_sweep"]),
        bits_values=tuple(int(b) for b in s["bits_values"]),
        K_at_bits_sweep=int(s["K_at_bits_sweep"]),
        seeds=_seed_list(s["seed"], int(s["seeds"])),
    )
    result = sim.sweep_fig1(cfg, jobs=args.jobs)
    points = result.points()
    plots = {}
    for sweep, label in (("K", "nodes K"), ("bits", "bits per coordinate")):
        xs = sorted(v for (name, v, _p) in points if name == sweep)
        series = {
            "empirical": (xs, [points[(sweep, x, "fpld")]["mean_kl"] for x in xs]),
            "upper bound": (xs, [points[(sweep, x, "fpld")]["upper"] for x in xs]),
            "lower bound": (xs, [points[(sweep, x, "fpld")]["lower"] for x in xs]),
        }
        plots[f"fig1_{sweep}_sweep"] = (
            series,
            dict(title=f"KL vs {label}", xlabel=label, ylabel="mean probe KL", logy=True),
        )
    return _finish_experiment(args, result, "fig1", s, plots)


def cmd_fig2(args) -> int:
    s = _common_resolution(args, _FIG2_DEFAULTS, "fig2")
    cfg = sim.Fig2Config(
        V=int(s["V"]), K=int(s["K"]), n=s["n"], m=int(s["m"]),
        clips=tuple(float(c) for c in s["clips"]),
        weights=None if s["weights"] is None else tuple(float(w) for w in s["weights"]),
        truth_scale=float(s["truth_scale"]), delta=float(s["delta"]), d=float(s["d"]),
        budgets_per_coord=tuple(float(b) for b in s["budgets_per_coord"]),
        policies=tuple(str(p) for p in s["policies"]),
        seeds=_seed_list(s["seed"], int(s["seeds"])),
    )
    result = sim.sweep_fig2(cfg, jobs=args.jobs)
    points = result.points()
    budgets = sorted({v for (_n, v, _p) in points})
    series = {
        policy: (budgets, [points[("B_tot_per_V", b, policy)]["mean_kl"] for b in budgets])
        for policy in cfg.policies
    }
    plots = {
        "fig2_policies": (
            series,
            dict(title="Allocation policies", xlabel="B_tot / V",
                 ylabel="mean probe KL", logy=True),
        )
    }
    return _finish_experiment(args, result, "fig2", s, plots)


def cmd_adaptive(args) -> int:
    s = _common_resolution(args, _ADAPTIVE_DEFAULTS, "adaptive")
    cfg = sim.AdaptiveConfig(
        V=int(s["V"]), K=int(s["K"]), n=s["n"], m=int(s["m"]),
        clips=tuple(float(c) for c in s["clips"]),
        truth_scale=float(s["truth_scale"]), delta=float(s["delta"]),
        budget_per_coord=float(s["budget_per_coord"]),
        B_max_per_coord=None if s["B_max_per_coord"] is None else float(s["B_max_per_coord"]),
        T0=int(s["T0"]),
        oracle_weights=None if s["oracle_weights"] is None
        else tuple(float(w) for w in s["oracle_weights"]),
        seeds=_seed_list(s["seed"], int(s["seeds"])),
    )
    result = sim.run_adaptive(cfg, jobs=args.jobs)
    i_ratio = result.columns.index("suboptimality")
    i_kl = result.columns.index("kl")
    ratios = [row[i_ratio] for row in result.rows]
    kls = [row[i_kl] for row in result.rows]
    print(f"mean stage-B KL        : {np.mean(kls):.6e}")
    print(f"mean suboptimality     : {np.mean(ratios):.8f}")
    print(f"90th pct suboptimality : {np.quantile(ratios, 0.9):.8f}")
    plots = {
        "adaptive_suboptimality": (
            {"suboptimality": (list(range(len(ratios))), ratios)},
            dict(title="Plug-in suboptimality per seed", xlabel="seed index",
                 ylabel="F ratio"),
        )
    }
    return _finish_experiment(args, result, "adaptive", s, plots)


# ---------------------------------------------------------------------------
# validate


def _validation_checks(inject_bias: float = 0.0):
    rng = np.random.default_rng(20_240_801)
    checks = []

    spec = quant.make_quantizer(1.0, 4)
    n_draws = 200_000
    u = rng.uniform(-spec.step / 2, spec.step / 2, n_draws)
    x = 0.3
    recon = quant.decode(spec, quant.encode(spec, np.full(n_draws, x), u), u)
    err = recon - x + inject_bias
    se = spec.step / math.sqrt(12.0) / math.sqrt(n_draws)
    checks.append(("dither unbiasedness", abs(err.mean()) <= 4.0 * se,
                   f"|mean error| = {abs(err.mean()):.3e}, 4 SE = {4 * se:.3e}"))
    var_target = spec.step ** 2 / 12.0
    rel = abs(err.var() / var_target - 1.0)
    checks.append(("dither variance", rel <= 0.01,
                   f"relative deviation from step^2/12 = {rel:.4f}"))
    ks = sstats.kstest(err, "uniform", args=(-spec.step / 2, spec.step))
    checks.append(("dither uniformity (KS)", ks.pvalue >= 0.001,
                   f"KS p-value = {ks.pvalue:.4f}"))

    worst = 0.0
    for _ in range(2000):
        ell = rng.standard_normal(16)
        eta = rng.standard_normal(16)
        a = cumulant_kl_exact(ell, eta)
        b = kl(softmax(ell), softmax(ell + eta))
        worst = max(worst, abs(a - b) / max(abs(a), abs(b), 1e-300))
    checks.append(("cumulant identity", worst <= 1e-12,
                   f"max relative gap = {worst:.2e}"))

    worst_gap = 0.0
    for _ in range(50):
        K = int(rng.integers(2, 17))
        w = np.exp(rng.normal(0.0, 2.0, K))
        V = int(rng.choice([1, 16, 256]))
        B_tot = float(rng.uniform(0.5, 8.0)) * K * V
        B_max = float(rng.uniform(1.2, 3.0)) * B_tot / K
        a = alloc.waterfill_clipped(w, B_tot, V, B_max)
        b = alloc.kkt_oracle(w, B_tot, V, B_max)
        worst_gap = max(worst_gap, float(np.max(np.abs(a.B - b.B))))
    checks.append(("allocation oracle equivalence", worst_gap <= 1e-6,
                   f"max |B_i| gap = {worst_gap:.2e} bits"))

    violations = 0
    worst_margin = -np.inf
    for _ in range(2000):
        K = int(rng.integers(2, 9))
        w = np.exp(rng.normal(0.0, 1.0, K))
        eta = float(rng.uniform(0.0, 0.5))
        w_hat = w * (1.0 + rng.uniform(-eta, eta, K))
        realized = float(np.max(np.abs(w_hat - w) / w))
        ratio = adaptive.suboptimality_ratio(w, w_hat, 8.0 * K, 1)
        margin = ratio - adaptive.transfer_bound(realized)
        worst_margin = max(worst_margin, margin)
        violations += margin > 1e-9
    checks.append(("transfer lemma", violations == 0,
                   f"violations = {violations}, worst margin = {worst_margin:.2e}"))
    return checks


def cmd_validate(args) -> int:
    checks = _validation_checks(inject_bias=args.inject_bias)
    failures = 0
    for name, ok, stat in checks:
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {stat}")
        failures += not ok
    return 1 if failures else 0


# ---------------------------------------------------------------------------
# parser


def _add_experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat config file; flags override it")
    p.add_argument("--out", default="results", help="output directory")
    p.add_argument("--seed", type=int, default=None,
                   help="base seed (default: FPLD_SEED env var, else 0)")
    p.add_argument("--seeds", type=int, default=None, help="number of seeds")
    p.add_argument("--jobs", type=int, default=1, help="parallel seed workers")
    p.add_argument("--plot", action="store_true", help="also emit SVG plots")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fpld",
        description="Bandwidth-constrained federated logit distillation toolkit",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bounds", help="evaluate the risk-rate terms")
    p.add_argument("--config")
    p.add_argument("--out", default=None, help="optional CSV path")
    for flag, typ in (
        ("--d", float), ("--K", int), ("--n", float), ("--m", int), ("--V", int),
        ("--delta", float), ("--rho", float), ("--L", float), ("--c1", float),
        ("--c2", float), ("--c3", float), ("--eps-opt", float), ("--eps-fit", float),
        ("--cp", float), ("--T", int), ("--c0", float),
        ("--bits-per-coord", float), ("--B", float),
    ):
        p.add_argument(flag, type=typ, default=None)
    p.add_argument("--B-list", default=None, help="per-node budgets, e.g. 256,256,768,768")
    p.add_argument("--L-list", default=None, help="per-node clip levels")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("allocate", help="water-filling budget split")
    p.add_argument("--config")
    p.add_argument("--w", default=None, help="weights, e.g. 1,1,16,16")
    p.add_argument("--Btot", dest="B_tot", type=float, default=None)
    p.add_argument("--V", type=int, default=None)
    p.add_argument("--Bmax", dest="B_max", type=float, default=None)
    p.set_defaults(func=cmd_allocate)

    p = sub.add_parser("fig1", help="homogeneous K/bits sweeps with bounds")
    _add_experiment_flags(p)
    p.set_defaults(func=cmd_fig1)

    p = sub.add_parser("fig2", help="heterogeneous allocation-policy sweep")
    _add_experiment_flags(p)
    p.set_defaults(func=cmd_fig2)

    p = sub.add_parser("adaptive", help="two-stage adaptive allocation run")
    _add_experiment_flags(p)
    p.add_argument("--T0", type=int, default=None, help="warm-up rounds")
    p.set_defaults(func=cmd_adaptive)

    p = sub.add_parser("validate", help="fast invariant suite")
    p.add_argument("--inject-bias", type=float, default=0.0,
                   help=argparse.SUPPRESS)  # fault-injection hook for tests
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
