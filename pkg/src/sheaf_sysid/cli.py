"""Command-line front end.

Four subcommands -- cohomology, simulate, identify, experiment -- all driven
by a single JSON config file; flags only override config fields.  Every
output embeds the config hash and the seeds used, and reruns with an
identical config produce byte-identical files.

Exit codes: 0 success (a non-identifiable diagnosis is a success), 1 usage or
configuration error, 2 numerical divergence.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import experiments
from .dynamics import (
    SimConfig,
    Trajectory,
    load_trajectory_csv,
    save_trajectory_csv,
    simulate_ensemble,
)
from .errors import (
    ConfigurationError,
    DivergenceError,
    SheafSysIdError,
    UsageError,
)
from .potentials import (
    Antagonistic,
    BoundedConfidence,
    ConstantEdgeForce,
    LinearBasisPotential,
    Quadratic,
    ShiftedQuadratic,
    ZeroField,
    monomial_basis,
)
from .sheaf import (
    Sheaf,
    build_coboundary,
    global_section_basis,
    harmonic_basis,
    load_sheaf,
)
from .sysid import fit_linear, fit_threshold, merge_datasets, residuals_exact, residuals_fd

_ZERO = ZeroField()


def config_hash(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:12]


def _require_keys(d: dict, allowed: set[str], where: str) -> None:
    unknown = set(d) - allowed
    if unknown:
        raise ConfigurationError(f"unknown keys in {where}: {sorted(unknown)}")


def _load_config(path: str) -> dict:
    try:
        config = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config is not valid JSON: {exc}") from None
    if not isinstance(config, dict):
        raise ConfigurationError("config must be a JSON object")
    return config


def _build_sheaf(spec) -> Sheaf:
    if isinstance(spec, str):
        return load_sheaf(spec)
    if not isinstance(spec, dict):
        raise ConfigurationError("sheaf spec must be a path or an object")
    if "path" in spec:
        _require_keys(spec, {"path"}, "sheaf")
        return load_sheaf(spec["path"])
    _require_keys(spec, {"builtin", "cycle_length", "variant"}, "sheaf")
    if spec.get("builtin") != "cycle":
        raise ConfigurationError("only the 'cycle' builtin sheaf is available")
    return experiments.make_cycle_sheaf(
        int(spec.get("cycle_length", 3)), spec.get("variant", "identity")
    )


def _build_potential(sheaf: Sheaf, spec: dict):
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigurationError("potential spec must be an object with a 'kind'")
    kind = spec["kind"]
    if kind == "quadratic":
        _require_keys(spec, {"kind"}, "potential")
        return Quadratic(sheaf)
    if kind == "shifted_quadratic":
        _require_keys(spec, {"kind", "target"}, "potential")
        return ShiftedQuadratic(sheaf, np.asarray(spec["target"], dtype=float))
    if kind == "bounded_confidence":
        _require_keys(spec, {"kind", "epsilon"}, "potential")
        return BoundedConfidence(sheaf, float(spec["epsilon"]))
    if kind == "antagonistic":
        _require_keys(spec, {"kind", "negative_edges"}, "potential")
        return Antagonistic(sheaf, spec["negative_edges"])
    if kind == "monomial":
        _require_keys(spec, {"kind", "theta"}, "potential")
        return LinearBasisPotential(sheaf, monomial_basis(sheaf), spec["theta"])
    if kind == "harmonic_augmented":
        _require_keys(spec, {"kind", "theta", "harmonic_force"}, "potential")
        basis = monomial_basis(sheaf) + (
            ConstantEdgeForce(sheaf, np.asarray(spec["harmonic_force"], dtype=float)),
        )
        return LinearBasisPotential(sheaf, basis, spec["theta"])
    raise ConfigurationError(f"unknown potential kind '{kind}'")


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")


def cmd_cohomology(config: dict, out_dir: Path, quiet: bool) -> int:
    _require_keys(config, {"command", "sheaf", "rank_tol"}, "config")
    sheaf = _build_sheaf(config.get("sheaf", {}))
    op = build_coboundary(sheaf)
    harm = harmonic_basis(op)
    sections = global_section_basis(op)
    eigs = np.zeros(op.d0)
    s = op.singular_values()
    eigs[: s.size] = s**2
    lam_min = float(eigs.min()) if op.d0 else 0.0
    lam_max = float(eigs.max()) if op.d0 else 0.0

    lines = [
        f"dim H0 = {sections.dim_h0}",
        f"dim H1 = {harm.dim_h1}",
        f"lambda range of delta*delta = [{lam_min!r}, {lam_max!r}]",
    ]
    if not quiet:
        print("\n".join(lines))
    tag = config_hash(config)
    report = {
        "config_hash": tag,
        "dim_h0": sections.dim_h0,
        "dim_h1": harm.dim_h1,
        "laplacian_lambda_min": lam_min,
        "laplacian_lambda_max": lam_max,
    }
    _write_json(out_dir / f"cohomology_{tag}.json", report)
    basis_rows = [
        ",".join(repr(float(v)) for v in col) for col in harm.basis.T
    ]
    (out_dir / f"harmonic_basis_{tag}.csv").write_text(
        "\n".join(basis_rows) + ("\n" if basis_rows else "")
    )
    return 0


def _initial_states(config: dict, d0: int) -> list[np.ndarray]:
    spec = config.get("initial_states")
    if spec is not None:
        states = [np.asarray(x, dtype=float) for x in spec]
        for x in states:
            if x.shape != (d0,):
                raise ConfigurationError("initial state has the wrong length")
        return states
    rand = config.get("random_initial_states")
    if rand is None:
        raise ConfigurationError("simulate needs initial_states or random_initial_states")
    _require_keys(rand, {"count", "scale"}, "random_initial_states")
    rng = np.random.default_rng([int(config.get("seed", 0)), 17])
    count = int(rand.get("count", 1))
    scale = float(rand.get("scale", 1.0))
    return [scale * rng.standard_normal(d0) for _ in range(count)]


_SIMULATE_KEYS = {
    "command",
    "sheaf",
    "potential",
    "initial_states",
    "random_initial_states",
    "horizon",
    "step",
    "alpha",
    "seed",
    "noise_std",
}


def cmd_simulate(config: dict, out_dir: Path, quiet: bool) -> int:
    _require_keys(config, _SIMULATE_KEYS, "config")
    sheaf = _build_sheaf(config.get("sheaf", {}))
    op = build_coboundary(sheaf)
    model = _build_potential(sheaf, config.get("potential", {"kind": "quadratic"}))
    cfg = SimConfig(
        horizon=float(config.get("horizon", 10.0)),
        step=float(config.get("step", 0.01)),
        alpha=float(config.get("alpha", 1.0)),
        seed=int(config.get("seed", 0)),
        noise_std=float(config.get("noise_std", 0.0)),
    )
    ics = _initial_states(config, op.d0)
    results = simulate_ensemble(op, model, _ZERO, ics, cfg)

    tag = config_hash(config)
    files, failures = [], []
    for i, result in enumerate(results):
        if isinstance(result, Trajectory):
            name = f"trajectory_{tag}_{i:03d}.csv"
            save_trajectory_csv(result, out_dir / name)
            files.append(name)
        else:
            failures.append({"index": i, "time": result.time, "error": str(result)})
    manifest = {
        "config_hash": tag,
        "seed": config.get("seed", 0),
        "step": cfg.step,
        "horizon": cfg.horizon,
        "noise_std": cfg.noise_std,
        "trajectories": files,
        "diverged": failures,
    }
    _write_json(out_dir / f"manifest_{tag}.json", manifest)
    if not quiet:
        print(f"wrote {len(files)} trajectories to {out_dir}")
        for failure in failures:
            print(f"trajectory {failure['index']} diverged at t = {failure['time']}")
    return 2 if failures else 0


_IDENTIFY_KEYS = {
    "command",
    "sheaf",
    "trajectories",
    "family",
    "residuals",
    "noise_std",
    "ridge",
    "seed",
}


def cmd_identify(config: dict, out_dir: Path, quiet: bool) -> int:
    _require_keys(config, _IDENTIFY_KEYS, "config")
    sheaf = _build_sheaf(config.get("sheaf", {}))
    op = build_coboundary(sheaf)
    traj_dir = Path(config.get("trajectories", "."))
    paths = sorted(traj_dir.glob("*.csv")) if traj_dir.is_dir() else []
    trajectories = [load_trajectory_csv(p) for p in paths]
    if not trajectories:
        raise UsageError(f"no trajectory files found under {traj_dir}")

    mode = config.get("residuals", "observed")
    if mode not in ("observed", "finite_difference"):
        raise ConfigurationError(f"unknown residual mode '{mode}'")
    if mode == "observed":
        datasets = [residuals_exact(op, t, _ZERO) for t in trajectories]
    else:
        sigma = float(config.get("noise_std", 0.0))
        datasets = [residuals_fd(op, t, _ZERO, noise_std=sigma) for t in trajectories]
    data = merge_datasets(datasets)

    family = config.get("family")
    if not isinstance(family, dict) or "kind" not in family:
        raise ConfigurationError("identify needs a 'family' object with a 'kind'")
    if family["kind"] == "threshold":
        _require_keys(family, {"kind", "bracket"}, "family")
        lo, hi = family.get("bracket", [0.25, 4.0])
        result = fit_threshold(op, data, (float(lo), float(hi)))
        estimate = {"epsilon_hat": float(result.theta_hat[0])}
        criterion = {"information": result.report.lambda_min}
    elif family["kind"] in ("monomial", "harmonic_augmented"):
        basis = monomial_basis(sheaf)
        if family["kind"] == "harmonic_augmented":
            _require_keys(family, {"kind", "harmonic_force"}, "family")
            basis = basis + (
                ConstantEdgeForce(
                    sheaf, np.asarray(family["harmonic_force"], dtype=float)
                ),
            )
        else:
            _require_keys(family, {"kind"}, "family")
        result = fit_linear(op, basis, data, ridge=float(config.get("ridge", 0.0)))
        estimate = {"theta_hat": result.theta_hat.tolist()}
        criterion = {
            "lambda_min": result.report.lambda_min,
            "lambda_max": result.report.lambda_max,
        }
    else:
        raise ConfigurationError(f"unknown family kind '{family['kind']}'")

    tag = config_hash(config)
    report = {
        "config_hash": tag,
        "trajectory_files": [p.name for p in paths],
        "n_samples": data.n_samples,
        "residual_mode": mode,
        "identifiable": bool(result.report.identifiable),
        "objective_value": result.objective_value,
        **estimate,
        **criterion,
    }
    _write_json(out_dir / f"identify_{tag}.json", report)
    if not quiet:
        print(json.dumps(report, indent=1, sort_keys=True))
    return 0


_EXPERIMENT_KEYS = {
    "command",
    "experiment",
    "seeds",
    "base_seed",
    "cycle_length",
    "coverage",
    "residual_mode",
    "basis_variant",
    "noise_std",
    "training_horizon",
    "n_training",
    "n_holdout",
}


def cmd_experiment(config: dict, out_dir: Path, quiet: bool) -> int:
    _require_keys(config, _EXPERIMENT_KEYS, "config")
    name = config.get("experiment")
    seeds = config.get("seeds")
    if seeds is None:
        base = int(config.get("base_seed", 0))
        seeds = list(range(base, base + 8))
    kwargs = {}
    for key in (
        "cycle_length",
        "coverage",
        "residual_mode",
        "basis_variant",
        "noise_std",
        "training_horizon",
        "n_training",
        "n_holdout",
    ):
        if key in config:
            kwargs[key] = config[key]
    cfg = experiments.ExperimentConfig(
        experiment_id=str(name), seeds=tuple(int(s) for s in seeds), **kwargs
    )
    output = experiments.run_experiment(cfg)

    tag = config_hash(config)
    wrote = []
    for label, rows in (("summary", output.summary), ("force_checks", output.force_checks)):
        if not rows:
            continue
        stem = f"{output.name}_{label}_{tag}"
        for row in rows:
            row.setdefault("config_hash", tag)
        (out_dir / f"{stem}.csv").write_text(experiments.rows_to_csv(rows))
        (out_dir / f"{stem}.txt").write_text(experiments.rows_to_text(rows))
        wrote += [f"{stem}.csv", f"{stem}.txt"]
    if not quiet:
        print(experiments.rows_to_text(output.summary))
        print(f"wrote {', '.join(wrote)} to {out_dir}")
    return 0


_COMMANDS = {
    "cohomology": cmd_cohomology,
    "simulate": cmd_simulate,
    "identify": cmd_identify,
    "experiment": cmd_experiment,
}


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="sheaf-sysid",
        description="Sheaf diffusion dynamics and edge-law recovery",
    )
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", required=True, help="JSON config file")
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument("--seed", type=int, default=None, help="override config seed")
    parser.add_argument("--quiet", action="store_true")
    args = parser.parse_args(argv)

    try:
        config = _load_config(args.config)
        declared = config.get("command")
        if declared is not None and declared != args.command:
            raise ConfigurationError(
                f"config declares command '{declared}', invoked as '{args.command}'"
            )
        if args.seed is not None:
            if args.command == "experiment":
                config["base_seed"] = args.seed
                config.pop("seeds", None)
            else:
                config["seed"] = args.seed
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        return _COMMANDS[args.command](config, out_dir, args.quiet)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SheafSysIdError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
