#!/usr/bin/env python3
"""
SMC Smoother
------------
Command-line entry point for the CBPF smoothing library and its benchmarks.

Subcommands:
  smooth    Run a single-chain kernel and summarise per-time marginals
  couple    One coupled run with hole diagnostics and a coupling matrix
  bench     Meeting-time benchmark over a (T, N, strategy) sweep
  unbiased  Unbiased estimate of a smoothing expectation with tuned lag
  mle       Stochastic-gradient maximum likelihood on synthetic data
  oracle    Exact Kalman / forward-backward references

Usage:
  python main.py --seed 1 oracle --model lg --params 0.9,1,1 --T 8
  python main.py --config barriers.cfg --seed 1 --threads 4 bench
  python main.py unbiased --model lg --h mid-state --N 16

Progress and errors go to standard error; data goes to files under --out
and, for single-run commands, as JSON to standard output.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime error,
3 time budget exhausted with partial output.
"""
import argparse
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from src.bench.config import (
    build_model,
    get_setting_description,
    get_setting_keys,
    load_experiment_config,
    model_from_config,
    parse_setting_value,
)
from src.bench.diagnostics import coupling_matrix, matrix_meeting_record, write_pgm
from src.bench.harness import run_meeting_benchmark
from src.bench.oracles import discrete_model_oracle, kalman_mle, kalman_smoother
from src.bench.outputs import (
    to_json,
    write_cost_csv,
    write_json,
    write_marginals_csv,
    write_matrix_csv,
    write_meeting_csv,
    write_paths_csv,
    write_trace_csv,
)
from src.estimation_engine import TEST_FUNCTIONS, averaged_estimate, tune_lag
from src.models.data_models import ExperimentConfig, SVParams, TransformedParams
from src.models.feynman_kac import simulate_lg_data, simulate_sv_data
from src.score_mle import LinearGaussianFamily, SVFamily, mle_fit, sv_initial_params
from src.smc.coupled_kernels import hole_profile
from src.smc.kernels import cbpf_transition, cpf_transition, marginal_cbpf_transition, particle_filter
from src.ui.cli import (
    display_coupling_summary,
    display_cost_records,
    display_mle_trace,
    display_model,
    display_oracle,
    display_run_header,
    display_smoothing_summary,
    display_unbiased_estimate,
    init_buffers,
)
from src.utils.buffers import BufferManager
from src.utils.errors import BudgetExhausted, ConfigError, SmoothingError, UsageError
from src.utils.seeding import make_rng, replicate_seed

KERNELS = {
    "cbpf": cbpf_transition,
    "cpf": cpf_transition,
    "marginal": marginal_cbpf_transition,
}


class CliParser(argparse.ArgumentParser):
    """ArgumentParser that raises instead of exiting on bad usage."""
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _add_model_flags(p: argparse.ArgumentParser, families=("barriers", "lg", "sv", "uniform", "discrete")):
    p.add_argument("--model", choices=families, help="Model family (overrides model.family)")
    p.add_argument("--params", help="Comma-separated model parameters (overrides model.params)")
    p.add_argument("--T", help="Time horizon(s), comma-separated (overrides model.T)")


def _add_chain_flags(p: argparse.ArgumentParser):
    p.add_argument("--N", help="Particle count(s), comma-separated (overrides sweep.N)")
    p.add_argument("--strategy", help="Forward coupling(s): JMC, IMC, IIC, JIC (overrides sweep.strategies)")


def build_parser() -> CliParser:
    parser = CliParser(prog="smc-smoother", description="CBPF smoothing, couplings and unbiased estimation")
    parser.add_argument("--config", help="Experiment configuration file (key=value lines)")
    parser.add_argument("--seed", type=int, help="Root seed (u64)")
    parser.add_argument("--threads", type=int, default=1, help="Worker processes for replicate sweeps")
    parser.add_argument("--out", help="Output directory (overrides out_dir)")
    parser.add_argument("--time-budget", type=float, help="Per-cell wall-clock budget in seconds")
    parser.add_argument("--record-timing", action="store_true", help="Write wall-clock columns")
    parser.add_argument("--quiet", "-q", action="store_true", help="Do not echo progress to standard error")
    parser.add_argument("--help-config", action="store_true", help="List configuration keys and exit")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("smooth", help="Run a single-chain kernel")
    _add_model_flags(p)
    _add_chain_flags(p)
    p.add_argument("--kernel", choices=sorted(KERNELS), default="cbpf")
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--burn-in", type=int, default=100)

    p = sub.add_parser("couple", help="Iterate the coupled kernel once from two particle-filter paths")
    _add_model_flags(p)
    _add_chain_flags(p)
    p.add_argument("--iterations", type=int, default=100, help="Rows of the coupling matrix")

    p = sub.add_parser("bench", help="Meeting-time benchmark")
    _add_model_flags(p)
    _add_chain_flags(p)
    p.add_argument("--replicates", type=int)
    p.add_argument("--cap", type=int, help="Coupled iterations allowed per replicate")

    p = sub.add_parser("unbiased", help="Unbiased estimate of a smoothing expectation")
    _add_model_flags(p)
    _add_chain_flags(p)
    p.add_argument("--h", choices=sorted(TEST_FUNCTIONS), default="mid-state")
    p.add_argument("--k", type=int, help="Offset (tuned if omitted)")
    p.add_argument("--L", type=int, help="Lag (tuned if omitted)")
    p.add_argument("--ell", type=int, help="Last offset of the average (default k)")
    p.add_argument("--pilot-runs", type=int, default=100)
    p.add_argument("--quantile", type=float, default=0.90)
    p.add_argument("--cap", type=int)

    p = sub.add_parser("mle", help="Stochastic-gradient MLE on synthetic data")
    _add_model_flags(p, families=("lg", "sv"))
    _add_chain_flags(p)
    p.add_argument("--schedule", choices=("unbiased", "markovian"), default="markovian")
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--init", help="Comma-separated starting parameters")
    p.add_argument("--mu-init", choices=("printed", "log"), default="printed",
                   help="SV starting mu: var(y) or log var(y)")
    p.add_argument("--pilot-runs", type=int, default=100)

    p = sub.add_parser("oracle", help="Exact references")
    _add_model_flags(p, families=("lg", "discrete"))
    return parser


def _overrides(args) -> dict:
    out = {
        "seed": args.seed,
        "out_dir": args.out,
        "time_budget_secs": args.time_budget,
        "record_timing": True if args.record_timing else None,
    }
    flags = {
        "model": "model_family",
        "params": "model_params",
        "T": "T",
        "N": "N",
        "strategy": "strategies",
    }
    for flag, field in flags.items():
        text = getattr(args, flag, None)
        if text is None:
            continue
        if field == "model_family":
            out[field] = text
            continue
        try:
            out[field] = parse_setting_value(field, text)
        except ValueError as e:
            raise UsageError(f"--{flag}: {e}") from e
    for flag, field in (("replicates", "replicates"), ("cap", "iteration_cap")):
        if getattr(args, flag, None) is not None and args.command == "bench":
            out[field] = getattr(args, flag)
    return out


def _rng(config: ExperimentConfig, command: str):
    return make_rng(replicate_seed(config.seed, command, 0))


def _emit(payload: dict):
    print(to_json(payload))


def run_smooth(args, config: ExperimentConfig, buffers: BufferManager) -> int:
    T, N = config.T[0], config.N[0]
    if args.iterations <= args.burn_in:
        raise UsageError("--iterations must exceed --burn-in")
    model = model_from_config(config, T)
    display_model(config.model_family, config.model_params, T, N)
    rng = _rng(config, "smooth")
    kernel = KERNELS[args.kernel]

    path = particle_filter(model, N, rng)
    samples = []
    changes = np.zeros(T)
    for i in range(1, args.iterations + 1):
        out = kernel(model, path, N, rng)
        if i > args.burn_in:
            changes += out.path != path
            samples.append(out.path)
        path = out.path
        if i % 1000 == 0:
            buffers.write("progress", f"{args.kernel} iteration {i}/{args.iterations}")

    samples = np.array(samples)
    means = samples.mean(axis=0)
    variances = samples.var(axis=0)
    rate = changes / (args.iterations - args.burn_in)
    out_dir = Path(config.out_dir)
    write_paths_csv(out_dir / "smooth_paths.csv", config.seed, samples)
    write_marginals_csv(out_dir / "smooth_marginals.csv", config.seed, means, variances,
                        extra={"reference_change_rate": rate})
    display_smoothing_summary(args.kernel, args.iterations, means, rate)
    _emit({"kernel": args.kernel, "seed": config.seed, "means": means, "variances": variances,
           "reference_change_rate": rate})
    return 0


def run_couple(args, config: ExperimentConfig, buffers: BufferManager) -> int:
    T, N, strategy = config.T[0], config.N[0], config.strategies[0]
    model = model_from_config(config, T)
    display_model(config.model_family, config.model_params, T, N)
    rng = _rng(config, "couple")

    ref_a = particle_filter(model, N, rng)
    ref_b = particle_filter(model, N, rng)
    b_star, distances, levels = hole_profile(ref_a, ref_b)
    matrix = coupling_matrix(model, N, strategy, args.iterations, rng, ref_a=ref_a, ref_b=ref_b, buffers=buffers)
    holes = matrix.sum(axis=1).tolist()
    record = matrix_meeting_record(matrix, seed=config.seed)

    out_dir = Path(config.out_dir)
    write_matrix_csv(out_dir / "coupling_matrix.csv", matrix)
    write_pgm(matrix, out_dir / "coupling_matrix.pgm")
    payload = {
        "seed": config.seed,
        "strategy": strategy.value,
        "N": N,
        "T": T,
        "b_star": b_star,
        "level_sizes": {str(k): len(v) for k, v in levels.items()},
        "holes": holes,
        "meeting": record,
    }
    write_json(out_dir / "couple.json", payload)
    display_coupling_summary(holes, record, b_star)
    _emit(payload)
    return 0


def run_bench(args, config: ExperimentConfig, buffers: BufferManager) -> int:
    display_model(config.model_family, config.model_params, config.T[0])
    rows, costs = run_meeting_benchmark(config, threads=args.threads, buffers=buffers)
    out_dir = Path(config.out_dir)
    write_meeting_csv(out_dir / "meeting.csv", config.seed, rows)
    write_cost_csv(out_dir / "cost.csv", config.seed, costs)
    display_cost_records(costs)
    if any(c.replicates < config.replicates for c in costs):
        raise BudgetExhausted("time budget exhausted; partial results written")
    return 0


def run_unbiased(args, config: ExperimentConfig, buffers: BufferManager) -> int:
    T, N, strategy = config.T[0], config.N[0], config.strategies[0]
    model = model_from_config(config, T)
    display_model(config.model_family, config.model_params, T, N)
    rng = _rng(config, "unbiased")

    if args.k is None or args.L is None:
        L, k, ell, tau_hint = tune_lag(model, N, strategy, rng, pilot_runs=args.pilot_runs,
                                       quantile=args.quantile, cap=args.cap, buffers=buffers)
    else:
        L, k = args.L, args.k
        ell = args.ell if args.ell is not None else k
        tau_hint = None
    estimate = averaged_estimate(model, TEST_FUNCTIONS[args.h], N, k, ell, L, strategy, rng,
                                 cap=args.cap, seed=config.seed, record_timing=config.record_timing,
                                 tau_hint=tau_hint, buffers=buffers)
    payload = {"h": args.h, "strategy": strategy.value, "N": N, "T": T, **estimate.model_dump(mode="json")}
    write_json(Path(config.out_dir) / "unbiased.json", payload)
    display_unbiased_estimate(estimate)
    _emit(payload)
    return 0


def run_mle(args, config: ExperimentConfig, buffers: BufferManager) -> int:
    T, N, strategy = config.T[0], config.N[0], config.strategies[0]
    family_name = config.model_family
    data_rng = make_rng(config.data_seed)
    params = config.model_params
    oracle = None

    if family_name == "lg":
        rho, sx, sy = params or (0.9, 1.0, 1.0)
        _, y = simulate_lg_data(rho, sx, sy, T, data_rng)
        family = LinearGaussianFamily(y)
        start = [float(v) for v in args.init.split(",")] if args.init else [0.5, 1.0, 1.0]
        init = TransformedParams.from_constrained(start, family.transforms)
        oracle = kalman_mle(y)
    elif family_name == "sv":
        mu, phi, rho, sigma = params or (-9.2, 0.97, -0.67, 0.20)
        theta = SVParams(mu=mu, phi=phi, rho=rho, sigma=sigma)
        _, y = simulate_sv_data(theta, T, data_rng, config.sv_stationary_variance)
        family = SVFamily(y, config.sv_stationary_variance)
        if args.init:
            init = TransformedParams.from_constrained([float(v) for v in args.init.split(",")], family.transforms)
        else:
            init = sv_initial_params(y, args.mu_init)
    else:
        raise UsageError("mle supports the lg and sv families")

    display_model(family_name, params, T, N)
    trace = mle_fit(family, None, init, N, strategy, args.schedule, args.iterations, _rng(config, "mle"),
                    pilot_runs=args.pilot_runs, record_timing=config.record_timing, buffers=buffers)
    write_trace_csv(Path(config.out_dir) / "trace.csv", config.seed, family.names, trace)
    display_mle_trace(family.names, trace)
    payload = {
        "schedule": args.schedule,
        "iterations": args.iterations,
        "estimate": dict(zip(family.names, trace[-1].constrained)),
    }
    if oracle is not None:
        payload["kalman_mle"] = dict(zip(family.names, oracle.tolist()))
    _emit(payload)
    return 0


def run_oracle(args, config: ExperimentConfig, buffers: BufferManager) -> int:
    T = config.T[0]
    if config.model_family == "lg":
        rho, sx, sy = config.model_params or (0.9, 1.0, 1.0)
        result = kalman_smoother(rho, sx, sy, T)
        payload = {"means": result.means, "variances": result.variances, "log_likelihood": result.log_likelihood}
        display_oracle("Kalman smoother", payload)
    elif config.model_family == "discrete":
        model = build_model("discrete", config.model_params, T)
        result = discrete_model_oracle(model)
        payload = {"marginals": result.marginals, "log_normalizer": result.log_normalizer}
        display_oracle("Forward-backward", payload)
    else:
        raise UsageError("oracle supports the lg and discrete families")
    _emit(payload)
    return 0


COMMANDS = {
    "smooth": run_smooth,
    "couple": run_couple,
    "bench": run_bench,
    "unbiased": run_unbiased,
    "mle": run_mle,
    "oracle": run_oracle,
}


def print_config_help():
    """Print the documented configuration keys"""
    print("Configuration keys (key=value, one per line):\n")
    for key in get_setting_keys():
        print(f"- {key}: {get_setting_description(key)}")


def cli_main(argv: Optional[List[str]] = None) -> int:
    """Run one CLI invocation and return its exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.help_config:
            print_config_help()
            return 0
        if args.command is None:
            raise UsageError("a subcommand is required: " + ", ".join(COMMANDS))
        if args.threads < 1:
            raise UsageError("--threads must be at least 1")
        config = load_experiment_config(args.config, _overrides(args))

        buffer_manager = BufferManager(echo_progress=not args.quiet)
        init_buffers(buffer_manager)
        display_run_header(args.command, config.seed, config.out_dir)
        return COMMANDS[args.command](args, config, buffer_manager)
    except SystemExit as e:
        # --help
        return int(e.code or 0)
    except (UsageError, ConfigError) as e:
        print(f"error: {e.message}", file=sys.stderr)
        return 1
    except BudgetExhausted as e:
        print(f"warning: {e.message}", file=sys.stderr)
        return 3
    except (SmoothingError, ValueError) as e:
        print(f"error: {getattr(e, 'message', e)}", file=sys.stderr)
        return 2


def main():
    """Main entry point for the application"""
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
