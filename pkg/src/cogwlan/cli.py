"""Command-line front end.

Subcommands ``analytic``, ``simulate``, ``validate`` and ``sweep`` evaluate
a grid of scenarios (the cartesian product of the listed lambda_p, N_s, R
and striping values) and write one CSV row per grid point, in grid order.
``gamma-profile`` writes the mean transmission time per start symbol.

Every flag can also come from an environment variable ``COGWLAN_<FLAG>``
(for example ``COGWLAN_SEED=7``) or from the ``[experiment]`` section of
the config file; flags win over the environment, which wins over the file.
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

from .config import ConfigError, ScenarioConfig, Striping, parse_ratio, read_config

ENV_PREFIX = "COGWLAN_"
COLUMNS = ("lambda_p", "n_s", "ratio_r", "policy", "lambda_sat_pkts_per_s", "big_lambda_sat",
           "sim_throughput", "mismatch_rel", "sim_ci95", "seed", "error")
GAMMA_COLUMNS = ("lambda_p", "policy", "ratio_r", "start_symbol", "start_time_s", "gamma_s")
MODES = ("analytic", "simulate", "validate")
DEFAULTS = {"seed": 1, "frames": 20000, "warmup_frames": None, "batches": 20, "gate": 0.03,
            "jobs": 1, "max_grid": 10000, "mode": "analytic"}
SWEEP_KEYS = {"lambda_p": "sweep_lambda_p", "n_s": "sweep_n_s", "ratio_r": "sweep_ratio_r",
              "striping": "sweep_striping"}


@dataclass
class ExperimentPlan:
    base: ScenarioConfig
    sweep: list[tuple[str, list]] = field(default_factory=list)
    mode: str = "analytic"
    output: str | None = None
    seed: int = 1
    frames: int = 20000
    warmup_frames: int | None = None
    batches: int = 20
    gate: float = 0.03
    jobs: int = 1
    max_grid: int = 10000

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        for name, values in self.sweep:
            if name not in SWEEP_KEYS:
                raise ConfigError(f"cannot sweep {name!r}; choose from {sorted(SWEEP_KEYS)}")
            if not values:
                raise ConfigError(f"empty value list for {name}")
        if self.grid_size() > self.max_grid:
            raise ConfigError(f"grid has {self.grid_size()} points, above the cap of {self.max_grid}")
        self.points()

    def grid_size(self) -> int:
        size = 1
        for _, values in self.sweep:
            size *= len(values)
        return size

    def points(self) -> list[ScenarioConfig]:
        names = [name for name, _ in self.sweep]
        out = []
        for combo in itertools.product(*(values for _, values in self.sweep)):
            cfg = self.base
            changes = dict(zip(names, combo))
            if "ratio_r" in changes:
                cfg = cfg.with_ratio(changes.pop("ratio_r"))
            out.append(cfg.replace(**changes) if changes else cfg)
        return out


def _parse_list(name: str, text: str) -> list:
    items = [t.strip() for t in str(text).replace(";", ",").split(",") if t.strip()]
    if name == "lambda_p":
        return [float(t) for t in items]
    if name == "n_s":
        return [int(t) for t in items]
    if name == "ratio_r":
        return [parse_ratio(t) for t in items]
    return [Striping.parse(t) for t in items]


def evaluate_point(args: tuple) -> dict:
    """One CSV row; failures are reported in the ``error`` column."""
    cfg, mode, seed, frames, warmup, batches = args
    row = {"lambda_p": cfg.lambda_p, "n_s": cfg.n_s, "ratio_r": str(cfg.ratio_r),
           "policy": cfg.striping.value, "lambda_sat_pkts_per_s": "", "big_lambda_sat": "",
           "sim_throughput": "", "mismatch_rel": "", "sim_ci95": "", "seed": "", "error": ""}
    try:
        lam = None
        if mode in ("analytic", "validate"):
            from .analysis import analyze
            a = analyze(cfg)
            lam = a.lambda_sat
            row["lambda_sat_pkts_per_s"] = f"{lam:.9g}"
            row["big_lambda_sat"] = f"{a.big_lambda_sat:.9g}"
        if mode in ("simulate", "validate"):
            from .simulator import simulate
            r = simulate(cfg, seed=seed, horizon_frames=frames, warmup_frames=warmup, batches=batches)
            row["sim_throughput"] = f"{r.per_su_throughput:.9g}"
            row["sim_ci95"] = f"{r.ci95_halfwidth:.6g}"
            row["seed"] = seed
            if lam is not None:
                row["mismatch_rel"] = f"{abs(r.per_su_throughput - lam) / lam:.6g}"
    except Exception as exc:  # noqa: BLE001  reported per point, the run goes on
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def run(plan: ExperimentPlan, stream=None) -> tuple[int, list[dict]]:
    """Evaluate every grid point and write the CSV; returns (exit status, rows)."""
    tasks = [(cfg, plan.mode, plan.seed, plan.frames, plan.warmup_frames, plan.batches)
             for cfg in plan.points()]
    if plan.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=plan.jobs) as pool:
            rows = list(pool.map(evaluate_point, tasks))
    else:
        rows = [evaluate_point(t) for t in tasks]
    _write(rows, COLUMNS, plan.output, stream)
    status = 0
    if any(r["error"] for r in rows):
        status = 1
    if plan.mode == "validate":
        if any(r["mismatch_rel"] == "" or float(r["mismatch_rel"]) > plan.gate for r in rows):
            status = 1
    return status, rows


def gamma_profile(plan: ExperimentPlan, stream=None) -> list[dict]:
    from .analysis import transmission_table

    rows = []
    for cfg in plan.points():
        table = transmission_table(cfg)
        g = table.geometry
        for i, gam in zip(table.starts, table.gamma):
            rows.append({"lambda_p": cfg.lambda_p, "policy": cfg.striping.value,
                         "ratio_r": str(cfg.ratio_r), "start_symbol": int(i),
                         "start_time_s": f"{i * g.t_sym:.9g}", "gamma_s": f"{gam:.9g}"})
    _write(rows, GAMMA_COLUMNS, plan.output, stream)
    return rows


def _write(rows, columns, path, stream) -> None:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    if path:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(buf.getvalue())
    else:
        (stream or sys.stdout).write(buf.getvalue())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cogwlan", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (("analytic", "analytic saturation throughput"),
                       ("simulate", "discrete-event simulation"),
                       ("validate", "analytic and simulation with a mismatch gate"),
                       ("sweep", "grid run in the mode given by --mode or the config"),
                       ("gamma-profile", "mean transmission time per start symbol")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="INI scenario file")
        p.add_argument("--out", help="CSV output path (default: stdout)")
        p.add_argument("--seed", type=int)
        p.add_argument("--frames", type=int, help="simulated frames per point")
        p.add_argument("--warmup-frames", type=int)
        p.add_argument("--batches", type=int)
        p.add_argument("--gate", type=float, help="largest accepted relative mismatch")
        p.add_argument("--jobs", type=int, help="worker processes")
        p.add_argument("--max-grid", type=int)
        p.add_argument("--lambda-p", help="comma-separated primary arrival rates")
        p.add_argument("--n-s", help="comma-separated secondary node counts")
        p.add_argument("--ratio-r", help="comma-separated DL:UL ratios, e.g. 13/12,3/2")
        p.add_argument("--striping", help="comma-separated policies")
        if name == "sweep":
            p.add_argument("--mode", choices=MODES)
    return parser


def _setting(args, extra: dict, env: dict, key: str, cast):
    value = getattr(args, key, None)
    if value is None:
        value = env.get(ENV_PREFIX + key.upper())
    if value is None:
        value = extra.get(key)
    if value is None or value == "":
        return DEFAULTS.get(key)
    return cast(value)


def plan_from_args(args: argparse.Namespace, env: dict | None = None) -> ExperimentPlan:
    env = dict(os.environ) if env is None else env
    config_path = args.config or env.get(ENV_PREFIX + "CONFIG")
    if config_path:
        base, extra = read_config(config_path)
    else:
        base, extra = ScenarioConfig(), {}
    sweep = []
    for name, key in SWEEP_KEYS.items():
        text = getattr(args, name, None) or env.get(ENV_PREFIX + name.upper()) or extra.get(key)
        if text:
            sweep.append((name, _parse_list(name, text)))
    if args.command == "sweep":
        mode = _setting(args, extra, env, "mode", str)
    elif args.command in MODES:
        mode = args.command
    else:
        mode = "analytic"

    def opt_int(v):
        return None if v in (None, "") else int(v)

    return ExperimentPlan(
        base=base, sweep=sweep, mode=mode,
        output=args.out or env.get(ENV_PREFIX + "OUT"),
        seed=_setting(args, extra, env, "seed", int),
        frames=_setting(args, extra, env, "frames", int),
        warmup_frames=_setting(args, extra, env, "warmup_frames", opt_int),
        batches=_setting(args, extra, env, "batches", int),
        gate=_setting(args, extra, env, "gate", float),
        jobs=_setting(args, extra, env, "jobs", int),
        max_grid=_setting(args, extra, env, "max_grid", int))


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        plan = plan_from_args(args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.command == "gamma-profile":
        gamma_profile(plan)
        return 0
    status, rows = run(plan)
    for r in rows:
        if r["error"]:
            print(f"point lambda_p={r['lambda_p']} n_s={r['n_s']} failed: {r['error']}", file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
