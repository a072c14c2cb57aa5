"""Command-line experiment harness.

Reads a flat ``key=value`` spec, executes the (mode, seed) run matrix, and
emits one learning-curve CSV per run plus a summary CSV -- all output is a
pure function of the spec, so re-running reproduces files byte for byte.
``compare`` turns summary files into a percentage-improvement report.

Exit codes: 0 success, 1 config error, 2 runtime/I-O error.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import dataclasses
import os
import statistics
import sys
from dataclasses import dataclass, field

from .environments import ENV_NAMES, make_env
from .trainer import MODES, RunMetrics, TrainConfig, run

__all__ = [
    "ConfigError",
    "ExperimentSpec",
    "parse_spec",
    "format_spec",
    "run_experiment",
    "compare_report",
    "trailing_means",
    "metrics_summary",
    "main",
]

OUT_DIR_ENV_VAR = "DPSR_REPLAY_OUT"
DEFAULT_OUT_DIR = "dpsr_runs"

CURVE_HEADER = "timestep,episode,return,mean100,epsilon"
SUMMARY_HEADER = "mode,seed,final_eval,best_mean100,steps_to_threshold"

# Short spelling -> TrainConfig field, for specs written with the compact
# hyperparameter names.
KEY_ALIASES = {
    "k": "batch_size",
    "eta": "learning_rate",
    "N": "buffer_size",
    "M": "recycle_max_priority",
    "C_c": "common_candidates",
    "C_r": "recycle_candidates",
    "F_t": "target_sync_every",
    "F_s": "train_every",
    "F_r": "recycle_every",
    "T": "total_steps",
    "gamma": "replace_gamma",
}

_CONFIG_FIELDS = {
    f.name: f.type for f in dataclasses.fields(TrainConfig)
    if f.name not in ("mode", "seed")
}


class ConfigError(ValueError):
    """Bad experiment spec (unknown key, unparsable value, missing env)."""


@dataclass
class ExperimentSpec:
    """A resolved run matrix: environment x modes x seeds plus overrides."""

    env: str
    modes: list = field(default_factory=lambda: ["dpsr"])
    seeds: list = field(default_factory=lambda: [0])
    base: TrainConfig = field(default_factory=TrainConfig)
    env_params: dict = field(default_factory=dict)
    threshold: float = 150.0
    out: str = None


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_typed(text: str, type_name: str):
    if type_name == "int":
        return int(text)
    if type_name == "float":
        return float(text)
    if type_name == "bool":
        return _parse_bool(text)
    return text


def _guess_value(text: str):
    for caster in (int, float, _parse_bool):
        try:
            return caster(text)
        except ValueError:
            continue
    return text


def parse_spec(text: str) -> ExperimentSpec:
    """Parse flat ``key=value`` text into a fully resolved spec.

    Blank lines and ``#`` comments are ignored. Unknown keys, unparsable
    values, and a missing environment raise ConfigError naming the line.
    """
    env = None
    env_params = {}
    modes = None
    seeds = None
    threshold = None
    out = None
    overrides = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        key = KEY_ALIASES.get(key, key)
        try:
            if key == "env":
                env = value
            elif key.startswith("env."):
                env_params[key[4:]] = _guess_value(value)
            elif key == "modes":
                modes = [m.strip() for m in value.split(",") if m.strip()]
            elif key == "seeds":
                seeds = [int(s) for s in value.split(",") if s.strip()]
            elif key == "threshold":
                threshold = float(value)
            elif key == "out":
                out = value
            elif key in _CONFIG_FIELDS:
                overrides[key] = _parse_typed(value, _CONFIG_FIELDS[key])
            else:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
        except ConfigError:
            raise
        except ValueError as err:
            raise ConfigError(
                f"line {lineno}: bad value for key {key!r}: {err}"
            ) from err
    if env is None:
        raise ConfigError("missing required key 'env'")
    if env not in ENV_NAMES:
        raise ConfigError(f"unknown environment {env!r}; expected one of {ENV_NAMES}")
    spec = ExperimentSpec(env=env, env_params=env_params)
    if modes is not None:
        for m in modes:
            if m not in MODES:
                raise ConfigError(f"unknown mode {m!r}; expected one of {MODES}")
        spec.modes = modes
    if seeds is not None:
        spec.seeds = seeds
    if threshold is not None:
        spec.threshold = threshold
    if out is not None:
        spec.out = out
    spec.base = TrainConfig(**overrides)
    return spec


def format_spec(spec: ExperimentSpec) -> str:
    """Emit a spec as canonical key=value text; parses back to an equal spec."""
    lines = [f"env={spec.env}"]
    for key in sorted(spec.env_params):
        lines.append(f"env.{key}={spec.env_params[key]}")
    lines.append("modes=" + ",".join(spec.modes))
    lines.append("seeds=" + ",".join(str(s) for s in spec.seeds))
    lines.append(f"threshold={spec.threshold!r}")
    if spec.out is not None:
        lines.append(f"out={spec.out}")
    for f_ in dataclasses.fields(TrainConfig):
        if f_.name in ("mode", "seed"):
            continue
        value = getattr(spec.base, f_.name)
        lines.append(f"{f_.name}={value!r}" if isinstance(value, float)
                     else f"{f_.name}={value}")
    return "\n".join(lines) + "\n"


# -- metric summaries --------------------------------------------------------


def trailing_means(returns, window: int = 100):
    """Mean of the last up-to-``window`` values, after each value."""
    out = []
    acc = 0.0
    for i, r in enumerate(returns):
        acc += r
        if i >= window:
            acc -= returns[i - window]
        out.append(acc / min(i + 1, window))
    return out


def metrics_summary(metrics: RunMetrics, threshold: float):
    """(final_eval, best trailing-100 mean, first timestep the mean met threshold)."""
    returns = [ep[1] for ep in metrics.episodes]
    means = trailing_means(returns)
    best = max(means) if means else None
    steps = None
    for (end_step, _, _), m in zip(metrics.episodes, means):
        if m >= threshold:
            steps = end_step
            break
    return metrics.final_eval, best, steps


# -- run matrix ---------------------------------------------------------------


def _execute_run(payload):
    """Worker for one (mode, seed) cell; must stay picklable for pools."""
    config_dict, env_name, env_params = payload
    config = TrainConfig(**config_dict)
    return run(config, lambda: make_env(env_name, **env_params))


def _resolved_config(spec: ExperimentSpec, mode: str, seed: int) -> dict:
    config = dataclasses.asdict(spec.base)
    config["mode"] = mode
    config["seed"] = seed
    return config

def _fmt(value) -> str:
    return repr(float(value))


def _write_curve(path, metrics: RunMetrics, schedules) -> None:
    returns = [ep[1] for ep in metrics.episodes]
    means = trailing_means(returns)
    with open(path, "w") as fh:
        fh.write(CURVE_HEADER + "\n")
        for i, ((end_step, ep_return, _), mean100) in enumerate(
                zip(metrics.episodes, means), start=1):
            fh.write(f"{end_step},{i},{_fmt(ep_return)},{_fmt(mean100)},"
                     f"{_fmt(schedules.epsilon_at(end_step))}\n")


def run_experiment(spec: ExperimentSpec, out_dir: str = None, jobs: int = 1) -> int:
    """Run the (mode, seed) matrix; write curves, config echoes, and a summary.

    Output directory precedence: explicit argument, then the spec's
    ``out``, then ``$DPSR_REPLAY_OUT``, then ``./dpsr_runs``.
    """
    out = out_dir or spec.out or os.environ.get(OUT_DIR_ENV_VAR) or DEFAULT_OUT_DIR
    try:
        os.makedirs(out, exist_ok=True)
        probe = os.path.join(out, ".write_probe")
        with open(probe, "w") as fh:
            fh.write("")
        os.remove(probe)
    except OSError as err:
        print(f"error: cannot write to output directory {out!r}: {err}",
              file=sys.stderr)
        return 2

    cells = [(mode, seed) for mode in spec.modes for seed in spec.seeds]
    payloads = [
        (_resolved_config(spec, mode, seed), spec.env, spec.env_params)
        for mode, seed in cells
    ]
    if jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_execute_run, payloads))
    else:
        results = [_execute_run(p) for p in payloads]

    summary_rows = []
    for (mode, seed), payload, metrics in zip(cells, payloads, results):
        config_dict = payload[0]
        single = ExperimentSpec(
            env=spec.env, modes=[mode], seeds=[seed],
            base=TrainConfig(**config_dict), env_params=dict(spec.env_params),
            threshold=spec.threshold, out=spec.out,
        )
        with open(os.path.join(out, f"config_{mode}_{seed}.txt"), "w") as fh:
            fh.write(format_spec(single))
        _write_curve(os.path.join(out, f"curve_{mode}_{seed}.csv"),
                     metrics, single.base.schedules())
        final_eval, best, steps = metrics_summary(metrics, spec.threshold)
        summary_rows.append((mode, seed, final_eval, best, steps))

    with open(os.path.join(out, "summary.csv"), "w") as fh:
        fh.write(SUMMARY_HEADER + "\n")
        for mode, seed, final_eval, best, steps in summary_rows:
            best_txt = _fmt(best) if best is not None else ""
            steps_txt = str(steps) if steps is not None else ""
            fh.write(f"{mode},{seed},{_fmt(final_eval)},{best_txt},{steps_txt}\n")
    return 0


# -- comparison report --------------------------------------------------------


def _read_summary(path):
    rows = []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != SUMMARY_HEADER:
            raise ConfigError(f"{path}: unexpected summary header {header!r}")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            mode, seed, final_eval, best, steps = line.split(",")
            rows.append({
                "mode": mode,
                "seed": int(seed),
                "final_eval": float(final_eval),
                "best_mean100": float(best) if best else None,
                "steps_to_threshold": int(steps) if steps else None,
            })
    return rows


def compare_report(summary_paths, baseline: str, treatment: str) -> str:
    """Percentage improvement of treatment over baseline, per summary file.

    Each summary file stands for one environment; a mode's score is its
    mean final evaluation over seeds. Environments whose baseline score is
    non-positive are listed but excluded from the percentage aggregates.
    """
    if isinstance(summary_paths, (str, os.PathLike)):
        summary_paths = [summary_paths]
    lines = [f"improvement of {treatment} over {baseline} (final evaluation)"]
    improvements = []
    for path in summary_paths:
        rows = _read_summary(path)
        scores = {}
        for mode in (baseline, treatment):
            evals = [r["final_eval"] for r in rows if r["mode"] == mode]
            if not evals:
                raise ConfigError(f"{path}: no rows for mode {mode!r}")
            scores[mode] = sum(evals) / len(evals)
        base_score, treat_score = scores[baseline], scores[treatment]
        if base_score <= 0:
            lines.append(
                f"{path}: baseline={base_score:.3f} treatment={treat_score:.3f} "
                "excluded (non-positive baseline)"
            )
            continue
        pct = 100.0 * (treat_score - base_score) / base_score
        improvements.append(pct)
        lines.append(
            f"{path}: baseline={base_score:.3f} treatment={treat_score:.3f} "
            f"improvement={pct:+.1f}%"
        )
    if improvements:
        lines.append(f"mean improvement: {statistics.mean(improvements):+.1f}%")
        lines.append(f"median improvement: {statistics.median(improvements):+.1f}%")
    else:
        lines.append("no environments eligible for percentage aggregates")
    return "\n".join(lines)


# -- entry point --------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dpsr-replay",
        description="Run experience-replay experiments and compare results.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    runp = sub.add_parser("run", help="execute the run matrix from a spec file")
    runp.add_argument("specfile")
    runp.add_argument("--out", default=None, help="output directory (wins over "
                      f"the spec and ${OUT_DIR_ENV_VAR})")
    runp.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    cmp_ = sub.add_parser("compare", help="report improvement between two modes")
    cmp_.add_argument("summaries", nargs="+", help="summary.csv files (one per environment)")
    cmp_.add_argument("--baseline", required=True)
    cmp_.add_argument("--treatment", required=True)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "run":
        try:
            with open(args.specfile) as fh:
                text = fh.read()
        except OSError as err:
            print(f"error: cannot read spec file: {err}", file=sys.stderr)
            return 2
        try:
            spec = parse_spec(text)
        except ConfigError as err:
            print(f"config error: {err}", file=sys.stderr)
            return 1
        try:
            return run_experiment(spec, out_dir=args.out, jobs=args.jobs)
        except Exception as err:  # runtime failures map to exit 2
            print(f"error: {err}", file=sys.stderr)
            return 2
    if args.command == "compare":
        try:
            report = compare_report(args.summaries, args.baseline, args.treatment)
        except ConfigError as err:
            print(f"config error: {err}", file=sys.stderr)
            return 1
        except OSError as err:
            print(f"error: {err}", file=sys.stderr)
            return 2
        print(report)
        return 0
    return 1


if __name__ == "__main__":
    sys.exit(main())
