"""Operator surface: dataset generation, training, replay, metrics,
stability certificates, LQR demos, and the end-to-end ring-road experiment.

Every command is deterministic under fixed seeds and writes a manifest
(config hash, seeds, version) next to its artifacts. Exit codes: 0 on
success, 1 on numerical failure, 2 on usage or I/O errors.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from .config import ExperimentConfig
from .frames import FrameKind, FrameSpec, make_rng
from .mapgraph import corridor_map, intersection_map, map_to_json, ring_map, save_map
from .metrics import evaluate_scene, max_radial_deviation, write_scene_csv
from .nn import NetworkConfig
from .policy import ContextPolicyNetwork, PolicyKind, ToyMlpPolicy
from .sim import (
    ContextPolicyPlanner,
    NoisyOraclePlanner,
    OraclePlanner,
    ToyPlanner,
    load_rollout,
    load_scenarios,
    make_corridor_scenario,
    run_log_replay,
    run_toy_rollout,
    save_rollout,
    save_scenarios,
)
from .stability import (
    LinearSubsystem,
    PolicyGain,
    bc_instability_witness,
    certify_closed_loop,
    simulate_linear,
    spectral_radius,
)
from .svgplot import plot_bar_chart, plot_plan_overlay, plot_ring_rollouts
from .training import (
    TOY_FRAME_SPEC,
    TrainingDiverged,
    build_toy_dataset,
    load_checkpoint,
    save_checkpoint,
    train_toy,
)

EXIT_OK = 0
EXIT_NUMERICAL = 1
EXIT_USAGE = 2

TOY_METHODS = (PolicyKind.BC, PolicyKind.BC_PERTURB, PolicyKind.CONTEXT_ONLY)


class UsageError(RuntimeError):
    pass


def _dump_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _write_manifest(out_dir, command: str, parameters: dict, seeds=()):
    canonical = json.dumps(parameters, sort_keys=True)
    manifest = {
        "command": command,
        "version": __version__,
        "parameters": parameters,
        "config_hash": hashlib.sha256(canonical.encode()).hexdigest(),
        "seeds": list(seeds),
    }
    _dump_json(os.path.join(out_dir, "manifest.json"), manifest)


def _load_config(path: str | None) -> ExperimentConfig:
    if path is None:
        path = os.environ.get("DRIVELAB_CONFIG")
    if path is None:
        return ExperimentConfig()
    try:
        with open(path) as fh:
            return ExperimentConfig.from_json(json.load(fh))
    except FileNotFoundError as err:
        raise UsageError(f"config file not found: {path}") from err
    except (ValueError, KeyError) as err:
        raise UsageError(f"bad config file {path}: {err}") from err


def _load_scenario(path: str, index: int):
    try:
        scenarios = load_scenarios(path)
    except FileNotFoundError as err:
        raise UsageError(f"scenario file not found: {path}") from err
    if not 0 <= index < len(scenarios):
        raise UsageError(f"scenario index {index} out of range ({len(scenarios)} scenes)")
    return scenarios[index]


# ---------------------------------------------------------------------------
# toy: the end-to-end ring-road covariate-shift experiment.


def _toy_seed_run(payload):
    """Train one (method, seed) pair and unroll it on the radius-50 ring."""
    kind_value, seed, n_scenes, scene_steps, train_steps, batch_size, lr, rollout_steps, save_model = payload
    kind = PolicyKind(kind_value)
    logs = build_toy_dataset(n_scenes=n_scenes, steps=scene_steps, seed=0)
    result = train_toy(
        kind,
        logs,
        learning_rate=lr,
        steps=train_steps,
        batch_size=batch_size,
        seed=seed,
    )
    _, record = run_toy_rollout(result.policy, radius=50.0, steps=rollout_steps, seed=seed)
    deviation = max_radial_deviation(record, 50.0)
    return {
        "kind": kind_value,
        "seed": seed,
        "final_loss": result.final_loss,
        "max_radial_deviation": deviation,
        "off_route": bool(deviation > 2.0),
        "trajectory": record.executed.as_array().tolist(),
        "policy": result.policy if save_model else None,
    }


def cmd_toy(args) -> int:
    os.makedirs(args.out_dir, exist_ok=True)
    methods = [PolicyKind(m) for m in args.methods.split(",")] if args.methods else list(TOY_METHODS)
    seeds = list(range(args.seeds))
    jobs = [
        (kind.value, seed, args.scenes, args.scene_steps, args.steps, args.batch_size, args.lr, args.rollout_steps, seed == 0)
        for kind in methods
        for seed in seeds
    ]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_toy_seed_run, jobs))
    else:
        results = [_toy_seed_run(j) for j in jobs]
    results.sort(key=lambda r: (r["kind"], r["seed"]))

    table = {}
    for kind in methods:
        rows = [r for r in results if r["kind"] == kind.value]
        off = sum(r["off_route"] for r in rows)
        table[kind.value] = {
            "seeds": len(rows),
            "off_route_count": off,
            "off_route_fraction": off / len(rows),
            "mean_max_radial_deviation": float(np.mean([r["max_radial_deviation"] for r in rows])),
            "per_seed": [
                {k: r[k] for k in ("seed", "final_loss", "max_radial_deviation", "off_route")}
                for r in rows
            ],
        }
        plot_ring_rollouts(
            os.path.join(args.out_dir, f"rollouts_{kind.value}.svg"),
            50.0,
            [np.asarray(r["trajectory"]) for r in rows],
            title=f"{kind.value}: {off}/{len(rows)} off route",
        )
        model = next((r["policy"] for r in rows if r["policy"] is not None), None)
        if model is not None:
            save_checkpoint(
                os.path.join(args.out_dir, f"model_{kind.value}_seed0.json"),
                model,
                extra={"frame": TOY_FRAME_SPEC.to_json() if kind is PolicyKind.CONTEXT_ONLY else None},
            )

    _dump_json(os.path.join(args.out_dir, "toy_metrics.json"), table)
    with open(os.path.join(args.out_dir, "toy_metrics.csv"), "w") as fh:
        fh.write("method,seeds,off_route_count,off_route_fraction,mean_max_radial_deviation\n")
        for kind in methods:
            row = table[kind.value]
            fh.write(
                f"{kind.value},{row['seeds']},{row['off_route_count']},"
                f"{row['off_route_fraction']!r},{row['mean_max_radial_deviation']!r}\n"
            )
    plot_bar_chart(
        os.path.join(args.out_dir, "off_route_rates.svg"),
        [k.value for k in methods],
        [table[k.value]["off_route_fraction"] for k in methods],
        title="off-route fraction",
    )
    _write_manifest(
        args.out_dir,
        "toy",
        {
            "methods": [k.value for k in methods],
            "seeds": args.seeds,
            "scenes": args.scenes,
            "scene_steps": args.scene_steps,
            "steps": args.steps,
            "batch_size": args.batch_size,
            "lr": args.lr,
            "rollout_steps": args.rollout_steps,
        },
        seeds=seeds,
    )
    for kind in methods:
        row = table[kind.value]
        print(f"{kind.value}: {row['off_route_count']}/{row['seeds']} off route "
              f"(mean max radial deviation {row['mean_max_radial_deviation']:.3f} m)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# dataset / map generation, training, replay, metrics.


def cmd_gen_map(args) -> int:
    if args.kind == "ring":
        data = ring_map(args.radius, interval=args.interval)
    elif args.kind == "corridor":
        data = corridor_map(args.length, n_lanes=args.lanes)
    else:
        data = intersection_map()
    save_map(args.out, data)
    print(f"wrote {args.out} ({len(data.polylines)} polylines, {len(data.polygons)} polygons)")
    return EXIT_OK


def cmd_gen_dataset(args) -> int:
    if args.kind == "ring":
        logs = build_toy_dataset(
            n_scenes=args.scenes,
            steps=args.steps,
            radius_range=(args.radius_min, args.radius_max),
            seed=args.seed,
        )
    else:
        rngs = [make_rng(("corridor-dataset", args.seed, i)) for i in range(args.scenes)]
        logs = [make_corridor_scenario(r) for r in rngs]
    save_scenarios(args.out, logs)
    print(f"wrote {len(logs)} scenes to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    try:
        logs = load_scenarios(args.dataset)
    except FileNotFoundError as err:
        raise UsageError(f"dataset not found: {args.dataset}") from err
    kind = PolicyKind(args.kind)
    config = NetworkConfig(toy_hidden=args.hidden, toy_layers=args.layers)
    frame_spec = FrameSpec(
        kind=FrameKind.EGO_PERTURBED_CENTER_ORIENTED, perturb_std=args.frame_std
    )
    result = train_toy(
        kind,
        logs,
        config=config,
        learning_rate=args.lr,
        steps=args.steps,
        batch_size=args.batch_size,
        seed=args.seed,
        frame_spec=frame_spec,
        weight_decay=args.weight_decay,
    )
    save_checkpoint(
        args.out,
        result.policy,
        extra={"frame": frame_spec.to_json(), "curve": result.curve, "seed": args.seed},
    )
    print(f"trained {kind.value} for {args.steps} steps; final loss {result.final_loss:.4f}; wrote {args.out}")
    return EXIT_OK


def _planner_from_args(args):
    if args.policy == "oracle":
        return OraclePlanner(horizon=args.horizon)
    if args.policy == "noisy-oracle":
        return NoisyOraclePlanner(horizon=args.horizon, noise_std=args.noise_std)
    if args.model is None:
        raise UsageError("provide --model for --policy checkpoint")
    try:
        loaded = load_checkpoint(args.model)
    except FileNotFoundError as err:
        raise UsageError(f"checkpoint not found: {args.model}") from err
    policy = loaded["policy"]
    frame_doc = loaded["extra"].get("frame")
    frame_spec = FrameSpec.from_json(frame_doc) if frame_doc else TOY_FRAME_SPEC
    if isinstance(policy, ToyMlpPolicy):
        return ToyPlanner(policy, frame_spec)
    return ContextPolicyPlanner(policy, frame_spec)


def cmd_replay(args) -> int:
    log = _load_scenario(args.scenario, args.index)
    planner = _planner_from_args(args)
    record = run_log_replay(log, planner, use_lqr=not args.no_lqr, seed=args.seed)
    os.makedirs(args.out_dir, exist_ok=True)
    save_rollout(
        os.path.join(args.out_dir, "rollout.json"),
        record,
        os.path.join(args.out_dir, "rollout.csv"),
    )
    scene_metrics = evaluate_scene(record, log)
    _dump_json(os.path.join(args.out_dir, "metrics.json"), scene_metrics.to_json())
    bound = float(np.max(np.abs(log.ego.positions()))) + 10.0
    from .svgplot import SvgCanvas

    canvas = SvgCanvas((-bound, -bound, bound, bound))
    canvas.polyline(log.ego.positions(), color="#1f77b4", width=1.5)
    canvas.polyline(record.executed.positions(), color="#d62728", width=1.5)
    canvas.save(os.path.join(args.out_dir, "rollout.svg"))
    _write_manifest(
        args.out_dir,
        "replay",
        {
            "scenario": os.path.basename(args.scenario),
            "index": args.index,
            "policy": args.policy,
            "no_lqr": args.no_lqr,
            "seed": args.seed,
        },
        seeds=[args.seed],
    )
    print(json.dumps(scene_metrics.to_json(), sort_keys=True))
    if record.truncated_reason:
        print(f"rollout truncated: {record.truncated_reason}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_metrics(args) -> int:
    log = _load_scenario(args.scenario, args.index)
    try:
        record = load_rollout(args.rollout, log)
    except FileNotFoundError as err:
        raise UsageError(f"rollout not found: {args.rollout}") from err
    scene = evaluate_scene(record, log)
    os.makedirs(args.out_dir, exist_ok=True)
    _dump_json(os.path.join(args.out_dir, "metrics.json"), scene.to_json())
    write_scene_csv(os.path.join(args.out_dir, "metrics.csv"), [scene])
    print(json.dumps(scene.to_json(), sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------------------
# stability certificates and the LQR demo.


def cmd_stability(args) -> int:
    if args.bc_witness is not None:
        gain = bc_instability_witness(args.bc_witness)
        closed = np.eye(gain.K.shape[0]) + gain.K
        rho = spectral_radius(closed)
        sys_bc = LinearSubsystem(
            A=np.eye(gain.K.shape[0]), B=np.eye(gain.K.shape[0]), sigma=0.0, c=1.0, epsilon=1.0
        )
        norms = simulate_linear(sys_bc, gain, np.ones(gain.K.shape[0]), 50)
        report = {
            "bc_witness_budget": args.bc_witness,
            "K_bc": gain.K.tolist(),
            "rho": rho,
            "norms_strictly_increasing": bool(np.all(np.diff(norms) > 0)),
            "verdict": "unstable for every budget",
        }
        print(json.dumps(report, sort_keys=True, indent=1))
        if args.out:
            _dump_json(args.out, report)
        return EXIT_OK

    if args.input is None:
        raise UsageError("provide an input JSON file or --bc-witness")
    try:
        with open(args.input) as fh:
            doc = json.load(fh)
    except FileNotFoundError as err:
        raise UsageError(f"input not found: {args.input}") from err
    try:
        system = LinearSubsystem(
            A=np.asarray(doc["A"], dtype=np.float64),
            B=np.asarray(doc["B"], dtype=np.float64),
            sigma=float(doc["sigma"]),
            c=float(doc["c"]),
            epsilon=float(doc["epsilon"]),
        )
        gain = PolicyGain(np.asarray(doc["K"], dtype=np.float64))
        cert = certify_closed_loop(system, gain)
    except (KeyError, ValueError) as err:
        raise UsageError(f"bad stability input: {err}") from err
    report = {"inputs": doc, **cert.to_json()}
    print(json.dumps(report, sort_keys=True, indent=1))
    if args.out:
        _dump_json(args.out, report)
    return EXIT_OK


def cmd_lqr_demo(args) -> int:
    from .lqr import LqrProblem, solve

    try:
        with open(args.problem) as fh:
            problem = LqrProblem.from_json(json.load(fh))
    except FileNotFoundError as err:
        raise UsageError(f"problem file not found: {args.problem}") from err
    except (KeyError, ValueError) as err:
        raise UsageError(f"bad problem file: {err}") from err
    plan = solve(problem)
    if not np.all(np.isfinite(plan.poses)):
        print("solver produced non-finite plan", file=sys.stderr)
        return EXIT_NUMERICAL
    os.makedirs(args.out_dir, exist_ok=True)
    with open(os.path.join(args.out_dir, "plan.csv"), "w") as fh:
        fh.write("step,x,y,heading,vx,vy,omega,ax,ay,alpha,jx,jy,zeta\n")
        for t in range(plan.poses.shape[0]):
            row = [t, *plan.poses[t], *plan.velocities[t], *plan.accelerations[t], *plan.inputs[t]]
            fh.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in row) + "\n")
    plot_plan_overlay(
        os.path.join(args.out_dir, "plan.svg"),
        np.asarray(problem.targets),
        plan.poses,
        title=f"cost {plan.cost:.4f}",
    )
    _write_manifest(args.out_dir, "lqr-demo", {"problem": os.path.basename(args.problem)})
    print(f"optimal cost {plan.cost:.6f}; wrote plan.csv and plan.svg to {args.out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser plumbing.


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="drivelab", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("toy", help="ring-road covariate-shift experiment end to end")
    p.add_argument("--out-dir", default="toy_out")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--steps", type=int, default=10_000, help="training steps per seed")
    p.add_argument("--scenes", type=int, default=200)
    p.add_argument("--scene-steps", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--rollout-steps", type=int, default=100)
    p.add_argument("--methods", default=None, help="comma list, default bc,bc_perturb,context_only")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_toy)

    p = sub.add_parser("gen-map", help="write a synthetic map JSON")
    p.add_argument("--kind", choices=("ring", "corridor", "intersection"), default="ring")
    p.add_argument("--radius", type=float, default=50.0)
    p.add_argument("--interval", type=float, default=3.0)
    p.add_argument("--length", type=float, default=150.0)
    p.add_argument("--lanes", type=int, default=2)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_map)

    p = sub.add_parser("gen-dataset", help="write a scenario JSON-lines dataset")
    p.add_argument("--kind", choices=("ring", "corridor"), default="ring")
    p.add_argument("--scenes", type=int, default=200)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--radius-min", type=float, default=10.0)
    p.add_argument("--radius-max", type=float, default=100.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_dataset)

    p = sub.add_parser("train", help="train one toy policy on a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--kind", choices=[k.value for k in PolicyKind], default="context_only")
    p.add_argument("--steps", type=int, default=10_000)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--hidden", type=int, default=128)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--frame-std", type=float, default=1.0)
    p.add_argument("--weight-decay", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("replay", help="closed-loop log replay of one scenario")
    p.add_argument("--scenario", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--policy", choices=("oracle", "noisy-oracle", "checkpoint"), default="checkpoint")
    p.add_argument("--model", default=None)
    p.add_argument("--horizon", type=int, default=10)
    p.add_argument("--noise-std", type=float, default=0.3)
    p.add_argument("--no-lqr", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default="replay_out")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("metrics", help="recompute metrics for a saved rollout")
    p.add_argument("--rollout", required=True)
    p.add_argument("--scenario", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--out-dir", default="metrics_out")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("stability", help="closed-loop stability certificate")
    p.add_argument("--input", default=None, help="JSON with A, B, K, sigma, c, epsilon")
    p.add_argument("--bc-witness", type=float, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_stability)

    p = sub.add_parser("lqr-demo", help="solve a tracking problem, plot targets vs plan")
    p.add_argument("--problem", required=True)
    p.add_argument("--out-dir", default="lqr_out")
    p.set_defaults(func=cmd_lqr_demo)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as err:
        print(f"i/o error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDiverged as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
