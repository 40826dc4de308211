"""Command-line pipeline: generate, train, infer, intervene, sweep, demo.

Every command materializes its full configuration (flag > config file >
built-in default) and echoes it into a manifest next to its outputs, so a
run can be reproduced from the manifest alone. CSV/JSON files are the
contract; --plot additionally renders SVG figures alongside them.

Exit codes: 0 ok, 2 usage, 3 numeric failure, 4 I/O.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, neural, storage
from .interventions import InterventionSpec, compare_interventions, simulate_intervention
from .solver import IntegrationError
from .structure import (
    CausalGraph,
    extract_linear,
    extract_nonlinear,
    jacobian_timeseries,
    score_graph,
    verify_unidentifiability,
)
from .systems import (
    LINEAR_DEFAULTS,
    CorruptionSpec,
    GenerationError,
    SparseSystemSpec,
    corrupt,
    gen_random_linear,
    simulate_bundle,
    system_from_config,
)
from .trajectory import Trajectory
from .training import (
    ArchSpec,
    TrainConfig,
    TrainingDivergedError,
    checkpoint_dict,
    checkpoint_from_dict,
    default_h_train,
    path_matrix_original_units,
    affine_view_original_units,
    rollout,
    train,
)


class UsageError(ValueError):
    pass


def _floats(text: str) -> list:
    return [float(x) for x in text.split(",") if x.strip() != ""]


def _ints(text: str) -> list:
    return [int(x) for x in text.split(",") if x.strip() != ""]


def _merge_config(args, defaults: dict, keys: list) -> dict:
    """flag > config file > default, reporting the materialized values."""
    file_cfg = {}
    if getattr(args, "config", None):
        file_cfg = storage.read_json(args.config)
    merged = dict(defaults)
    for key in keys:
        if key in file_cfg:
            merged[key] = file_cfg[key]
        flag = getattr(args, key, None)
        if flag is not None:
            merged[key] = flag
    return merged


def _start_manifest(command: str, args, inputs: list) -> tuple[dict, float]:
    manifest = {
        "command": command,
        "inputs": [str(p) for p in inputs],
        "seed": getattr(args, "seed", None),
        "out_dir": str(args.out),
        "version": __version__,
    }
    return manifest, time.perf_counter()


def _finish_manifest(out_dir, manifest: dict, t0: float, status: str, error: str | None = None):
    manifest["status"] = status
    if error is not None:
        manifest["error"] = error
    manifest["wall_clock_s"] = time.perf_counter() - t0
    try:
        storage.write_json(Path(out_dir) / "manifest.json", manifest)
    except OSError:
        if status == "ok":
            raise


def _run_with_manifest(command, args, inputs, config, body) -> int:
    manifest, t0 = _start_manifest(command, args, inputs)
    manifest["config"] = config
    try:
        extra = body() or {}
    except Exception as err:
        _finish_manifest(args.out, manifest, t0, "error", str(err))
        raise
    manifest.update(extra)
    _finish_manifest(args.out, manifest, t0, "ok")
    return 0


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------

def cmd_generate(args) -> int:
    spec_cfg = storage.read_json(args.spec) if args.spec else {}
    for key in ("n", "density", "t_end", "points"):
        flag = getattr(args, key, None)
        if flag is not None:
            spec_cfg[key] = flag
    config = {
        "system": args.system,
        "sigma": args.sigma,
        "irr": args.irr,
        "seed": args.seed,
        "system_config": spec_cfg,
    }

    def body():
        bundle = system_from_config(args.system, spec_cfg, seed=args.seed)
        times = np.linspace(0.0, float(bundle.config["t_end"]), int(bundle.config["points"]))
        clean = simulate_bundle(bundle, times)
        spec = CorruptionSpec(sigma=args.sigma, irr=args.irr, seed=args.seed)
        observed = corrupt(clean, spec)
        system_json = {**bundle.config, "kind": bundle.kind, "seed": args.seed}
        corruption_json = {"sigma": args.sigma, "irr": args.irr, "seed": args.seed}
        storage.write_dataset_bundle(args.out, observed, bundle.truth, system_json, corruption_json)
        config["system_config"] = system_json
        return {"rows": len(observed)}

    return _run_with_manifest("generate", args, [args.spec] if args.spec else [], config, body)


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def _resolve_train_settings(args, bundle) -> dict:
    n = bundle.trajectory.dim
    kind = bundle.system.get("kind", "")
    defaults = {
        "order": int(bundle.system.get("order", 1)),
        "activation": "linear" if kind == "linear" else "elu",
        "features": "identity",
        "hidden": None,
        "lam": 0.1 if n >= 50 else 0.01,
        "lr": 0.01,
        "epochs": 2000,
        "h_train": None,
        "normalization": None,
        "seed": 0,
    }
    keys = list(defaults)
    merged = _merge_config(args, defaults, keys)
    if merged["hidden"] is not None and not isinstance(merged["hidden"], (list, tuple)):
        merged["hidden"] = _ints(str(merged["hidden"]))
    return merged


def cmd_train(args) -> int:
    bundle = storage.read_dataset_bundle(args.data)
    cfg = _resolve_train_settings(args, bundle)

    def body():
        arch = ArchSpec(
            hidden=None if cfg["hidden"] is None else tuple(cfg["hidden"]),
            activation=cfg["activation"],
            order=int(cfg["order"]),
            input_features=cfg["features"],
        )
        tc = TrainConfig(
            lam=float(cfg["lam"]),
            lr=float(cfg["lr"]),
            epochs=int(cfg["epochs"]),
            h_train=cfg["h_train"],
            normalization=cfg["normalization"],
            seed=int(cfg["seed"]),
        )
        field, report = train(bundle.trajectory, arch, tc)
        out = Path(args.out)
        storage.write_json(out / "checkpoint.json", checkpoint_dict(field, report.normalization, tc))
        storage.write_training_log(out / "training_log.csv", report.data_losses, report.penalties)
        if args.plot:
            from . import plots

            plots.save_loss_curve(report.data_losses, report.penalties, out / "loss_curve.svg")
            recon = _model_trajectory(field, report.normalization, bundle.trajectory)
            plots.save_trajectory_plot(
                Trajectory(recon.times, report.normalization.decode(recon.states[:, : field.dim])),
                out / "fit.svg",
                title="reconstruction (solid) vs observed (dashed)",
                reference=bundle.trajectory,
            )
        return {
            "final_data_loss": report.final_data_loss,
            "final_penalty": report.penalties[-1],
            "train_seconds": report.seconds,
        }

    return _run_with_manifest("train", args, [args.data], cfg, body)


def _model_trajectory(field, norm, observed: Trajectory) -> Trajectory:
    """Model reconstruction over the observed grid, in normalized space.

    Uses the training rollout (fixed-step RK4) so second-order models carry
    their velocity estimate along; returns the full state (2n for order 2).
    """
    target = norm.encode(observed.states)
    if field.order == 2:
        v0, _ = neural.forward(field.velocity_net, target[0])
        y0 = np.concatenate([target[0], v0])
    else:
        y0 = target[0]
    traj, _ = rollout(field, y0, observed.times, default_h_train(observed.times))
    return traj


# ---------------------------------------------------------------------------
# infer
# ---------------------------------------------------------------------------

def cmd_infer(args) -> int:
    bundle = storage.read_dataset_bundle(args.data)
    snap = storage.read_json(args.checkpoint)
    config = {
        "epsilon": args.epsilon,
        "mode": args.mode,
        "reduce": "sum" if args.raw_sum else "mean",
    }

    def body():
        field, norm, _ = checkpoint_from_dict(snap)
        if args.mode == "linear":
            graph = extract_linear(field, args.epsilon)
        else:
            recon = _model_trajectory(field, norm, bundle.trajectory)
            graph = extract_nonlinear(field, recon, args.epsilon, config["reduce"])
        out = Path(args.out)
        storage.write_graph_csv(out / "scores.csv", graph.scores)
        storage.write_graph_csv(out / "adjacency.csv", graph.adjacency.astype(float))
        if graph.signs is not None:
            storage.write_graph_csv(out / "signs.csv", graph.signs)
        if args.mode == "linear":
            storage.write_graph_csv(
                out / "coefficients_original.csv", path_matrix_original_units(field, norm)
            )
        extra = {}
        if bundle.truth is not None:
            metrics = score_graph(graph, bundle.truth)
            storage.write_json(out / "metrics.json", metrics.to_dict())
            extra["metrics"] = metrics.to_dict()
        if args.plot:
            from . import plots

            plots.save_heatmap(graph.scores, out / "scores.svg", "edge scores")
            plots.save_heatmap(graph.adjacency.astype(float), out / "adjacency.svg", "adjacency")
            if args.mode == "jacobian":
                recon = _model_trajectory(field, norm, bundle.trajectory)
                J = jacobian_timeseries(field, recon)
                plots.save_jacobian_timeseries_plot(
                    recon.times, J, out / "jacobians.svg", "partial derivatives over time"
                )
        return extra

    return _run_with_manifest("infer", args, [args.checkpoint, args.data], config, body)


# ---------------------------------------------------------------------------
# intervene
# ---------------------------------------------------------------------------

def cmd_intervene(args) -> int:
    if not args.checkpoint and not args.system:
        raise UsageError("intervene needs --checkpoint and/or --system")
    spec = InterventionSpec.from_dict(storage.read_json(args.interventions))
    config = {"interventions": spec.to_dict()}

    def body():
        truth_field = None
        x0 = None if args.x0 is None else np.asarray(_floats(args.x0))
        if args.system:
            sys_cfg = storage.read_json(args.system)
            if int(sys_cfg.get("order", 1)) != 1:
                raise UsageError("intervene currently handles first-order systems")
            bundle = system_from_config(sys_cfg["kind"], sys_cfg, seed=int(sys_cfg.get("seed", 0)))
            truth_field = bundle.field
            if x0 is None:
                x0 = bundle.x0
        learned_field = learned_norm = None
        if args.checkpoint:
            learned_field, learned_norm, _ = checkpoint_from_dict(storage.read_json(args.checkpoint))
            if learned_field.order != 1:
                raise UsageError("intervene currently handles first-order checkpoints")
        if x0 is None:
            raise UsageError("no initial state: pass --x0 or a --system with one")

        out = Path(args.out)
        extra: dict = {}
        if truth_field is not None and learned_field is not None:
            report = compare_interventions(truth_field, learned_field, spec, x0, learned_norm)
            sims = report.pop("trajectories")
            for name, sim in sims.items():
                storage.write_trajectory_csv(out / f"{name}_trajectory.csv", sim)
            storage.write_json(out / "report.json", report)
            extra["report"] = {
                k: report[k] for k in ("per_variable_sup_gap", "sign_agreement") if k in report
            }
            if args.plot and len(sims) == 2:
                from . import plots

                plots.save_trajectory_plot(
                    sims["learned"], out / "intervention.svg",
                    "intervened: learned (solid) vs truth (dashed)", reference=sims["truth"],
                )
        else:
            which = "truth" if truth_field is not None else "learned"
            target = truth_field if truth_field is not None else learned_field
            sim = simulate_intervention(target, spec, x0, learned_norm)
            storage.write_trajectory_csv(out / f"{which}_trajectory.csv", sim)
            storage.write_json(out / "report.json", {"simulated": which, "spec": spec.to_dict()})
            if args.plot:
                from . import plots

                plots.save_trajectory_plot(sim, out / "intervention.svg", f"intervened {which} system")
        return extra

    inputs = [p for p in (args.interventions, args.system, args.checkpoint) if p]
    return _run_with_manifest("intervene", args, inputs, config, body)


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

def run_sweep_cell(task: dict) -> dict:
    """One (dim, sigma, irr, seed) run: generate, train, infer, score."""
    dim, sigma, irr, seed = task["dim"], task["sigma"], task["irr"], task["seed"]
    times = np.linspace(0.0, task["t_end"], task["points"])
    spec = SparseSystemSpec(n=dim, density=task["density"], seed=seed)
    system, truth, clean = gen_random_linear(spec, times)
    observed = corrupt(clean, CorruptionSpec(sigma=sigma, irr=irr, seed=seed))
    arch = ArchSpec(activation="linear", order=2)
    tc = TrainConfig(
        lam=0.1 if dim >= 50 else 0.01,
        epochs=task["epochs"],
        h_train=task["h_train"],
        seed=seed,
    )
    field, report = train(observed, arch, tc)
    graph = extract_linear(field, task["epsilon"])
    metrics = score_graph(graph, truth)
    return {
        "dim": dim,
        "sigma": sigma,
        "irr": irr,
        "seed": seed,
        "final_data_loss": report.final_data_loss,
        **metrics.to_dict(),
    }


def cmd_sweep(args) -> int:
    dims = _ints(args.dims)
    sigmas = _floats(args.sigmas)
    irrs = _floats(args.irrs)
    seeds = _ints(args.seeds)
    if not seeds:
        raise UsageError("sweep needs at least one seed")
    if not dims or not sigmas or not irrs:
        raise UsageError("sweep needs non-empty --dims, --sigmas, --irrs")
    config = {
        "dims": dims,
        "sigmas": sigmas,
        "irrs": irrs,
        "seeds": seeds,
        "epochs": args.epochs,
        "density": args.density,
        "epsilon": args.epsilon,
        "t_end": args.t_end,
        "points": args.points,
        "h_train": args.h_train,
        "workers": args.workers or os.cpu_count(),
    }

    def body():
        tasks = [
            {
                "dim": d, "sigma": s, "irr": r, "seed": seed,
                "epochs": args.epochs, "density": args.density,
                "epsilon": args.epsilon, "t_end": args.t_end,
                "points": args.points, "h_train": args.h_train,
            }
            for d in dims for s in sigmas for r in irrs for seed in seeds
        ]
        workers = config["workers"]
        if workers and workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                runs = list(pool.map(run_sweep_cell, tasks))
        else:
            runs = [run_sweep_cell(t) for t in tasks]

        lines = ["dim,sigma,irr,seeds,shd_bar,tpr,tnr"]
        cells = {}
        for run in runs:
            cells.setdefault((run["dim"], run["sigma"], run["irr"]), []).append(run)
        for (d, s, r), group in sorted(cells.items()):
            shd_bar = float(np.mean([g["shd_bar"] for g in group]))
            tpr = float(np.mean([g["tpr"] for g in group]))
            tnr = float(np.mean([g["tnr"] for g in group]))
            lines.append(
                f"{d},{repr(s)},{repr(r)},{len(group)},"
                f"{repr(shd_bar)},{repr(tpr)},{repr(tnr)}"
            )
        out = Path(args.out)
        storage.atomic_write_text(out / "sweep.csv", "\n".join(lines) + "\n")
        storage.write_json(out / "runs.json", runs)
        return {"cells": len(cells), "runs": len(runs)}

    return _run_with_manifest("sweep", args, [], config, body)


# ---------------------------------------------------------------------------
# demo-unidentifiability
# ---------------------------------------------------------------------------

def cmd_demo_unidentifiability(args) -> int:
    def body():
        report = verify_unidentifiability()
        print(report["summary"])
        storage.write_json(Path(args.out) / "unidentifiability.json", report)
        return {
            "sup_deviation_exact": report["sup_deviation_exact"],
            "sup_deviation_dopri5": report["sup_deviation_dopri5"],
        }

    return _run_with_manifest("demo-unidentifiability", args, [], {}, body)


# ---------------------------------------------------------------------------
# parser / entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="odecausal",
        description="Learn governing ODEs from one trajectory and predict interventions.",
    )
    parser.add_argument("--version", action="version", version=f"odecausal {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic dataset bundle")
    p.add_argument("system", choices=["linear", "spiral", "lv", "transcription"])
    p.add_argument("--spec", help="JSON file with system parameters")
    p.add_argument("--n", type=int, help="number of variables (linear systems)")
    p.add_argument("--density", type=float, help="expected per-matrix edge density")
    p.add_argument("--t-end", dest="t_end", type=float)
    p.add_argument("--points", type=int)
    p.add_argument("--sigma", type=float, default=0.0, help="observation noise std")
    p.add_argument("--irr", type=float, default=0.0, help="fraction of rows dropped")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="fit a neural field to a dataset bundle")
    p.add_argument("--data", required=True, help="dataset bundle directory")
    p.add_argument("--config", help="JSON config file (flag > file > default)")
    p.add_argument("--order", type=int, choices=[1, 2])
    p.add_argument("--activation", choices=["linear", "tanh", "elu"])
    p.add_argument("--features", choices=["identity", "cube"])
    p.add_argument("--hidden", help="comma-separated hidden widths, e.g. 20,20")
    p.add_argument("--lambda", dest="lam", type=float, help="path-penalty weight")
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--h-train", dest="h_train", type=float)
    p.add_argument("--normalization", choices=["affine", "maxabs", "none"])
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="extract the causal graph from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--epsilon", type=float, default=0.05)
    p.add_argument("--mode", choices=["linear", "jacobian"], default="linear")
    p.add_argument("--raw-sum", action="store_true", help="sum |Jacobian| instead of mean")
    p.add_argument("--out", required=True)
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("intervene", help="simulate variable/system interventions")
    p.add_argument("--interventions", required=True, help="intervention spec JSON")
    p.add_argument("--system", help="system.json of a ground-truth bundle")
    p.add_argument("--checkpoint", help="trained model checkpoint")
    p.add_argument("--x0", help="comma-separated initial state override")
    p.add_argument("--out", required=True)
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=cmd_intervene)

    p = sub.add_parser("sweep", help="metrics over dims x sigmas x irrs x seeds")
    p.add_argument("--dims", default="10")
    p.add_argument("--sigmas", default="0")
    p.add_argument("--irrs", default="0")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--epochs", type=int, default=2000)
    p.add_argument("--density", type=float, default=LINEAR_DEFAULTS["density"])
    p.add_argument("--epsilon", type=float, default=0.05)
    p.add_argument("--t-end", dest="t_end", type=float, default=LINEAR_DEFAULTS["t_end"])
    p.add_argument("--points", type=int, default=LINEAR_DEFAULTS["points"])
    p.add_argument("--h-train", dest="h_train", type=float)
    p.add_argument("--workers", type=int, help="worker processes (default: logical cores)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("demo-unidentifiability", help="two systems, one trajectory")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_demo_unidentifiability)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (ValueError, KeyError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (IntegrationError, TrainingDivergedError, GenerationError, FloatingPointError) as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return 3
    except OSError as err:
        print(f"i/o failure: {err}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
