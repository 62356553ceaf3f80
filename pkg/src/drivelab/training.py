"""Training-set extraction, training loops, and model checkpoints.

Toy examples pair frame-local features with next-pose targets extracted
from ring-road logs; the context-only kind draws fresh frame noise per
example (independently at every history step), while the bc_perturb kind
jitters the current position and blends the target trajectory back to the
logged path over 5 steps. Full-pipeline examples carry one observation per
history step plus the (H, T, 3) target tensor the auxiliary loss consumes.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import nn
from .frames import FrameKind, FrameSpec, make_rng, split_rng
from .geometry import normalize_angle
from .policy import (
    TOY_CONTEXT_POINTS,
    TOY_HISTORY,
    ContextPolicyNetwork,
    ObservationLimits,
    PolicyKind,
    ToyMlpPolicy,
    toy_bc_features,
    toy_context_features,
    toy_input_dim,
    toy_output_dim,
)
from .sim import ScenarioLog, make_ring_scenario

TOY_FRAME_SPEC = FrameSpec(kind=FrameKind.EGO_PERTURBED_CENTER_ORIENTED, perturb_std=1.0)
BC_PERTURB_STEPS = 10
BC_PERTURB_BLEND = 5
BC_PERTURB_JITTER = 1.0


class InsufficientHorizon(ValueError):
    """The log is too short around this step for the requested example."""


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; carries the step at which it happened."""


def build_toy_dataset(
    n_scenes: int = 200,
    steps: int = 100,
    radius_range: tuple = (10.0, 100.0),
    seed: int = 0,
) -> list[ScenarioLog]:
    """Ring scenes with radii drawn uniformly from the training range."""
    logs = []
    for rng in split_rng(("toy-dataset", seed), n_scenes):
        radius = float(rng.uniform(*radius_range))
        logs.append(make_ring_scenario(radius, steps=steps, rng=rng))
    return logs


def _future_needed(kind: PolicyKind) -> int:
    return BC_PERTURB_STEPS if kind is PolicyKind.BC_PERTURB else 1


def toy_example_steps(log: ScenarioLog, kind: PolicyKind) -> range:
    """Step indices with full history and future horizons available."""
    return range(TOY_HISTORY - 1, len(log.ego) - _future_needed(kind))


def make_toy_example(
    log: ScenarioLog,
    step: int,
    kind: PolicyKind,
    frame_spec: FrameSpec = TOY_FRAME_SPEC,
    rng: np.random.Generator | None = None,
    lane_points: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """One (features, target) pair at `step`; targets are frame-local."""
    if step not in toy_example_steps(log, kind):
        raise InsufficientHorizon(f"step {step} lacks history or future in a {len(log.ego)}-pose log")
    if rng is None:
        rng = make_rng(frame_spec.rng_seed)
    if lane_points is None:
        lane_points = log.build_graph().start_points()
    poses = log.ego.as_array()
    history = poses[step - TOY_HISTORY + 1 : step + 1]

    if kind is PolicyKind.CONTEXT_ONLY:
        feats, frame = toy_context_features(lane_points, history[:, :2], log.goal, frame_spec, rng)
        nxt = poses[step + 1]
        local = frame.to_frame(nxt[:2])
        target = np.array([local[0], local[1], frame.heading_to_frame(nxt[2])])
        return feats, target

    if kind is PolicyKind.BC:
        feats, frame = toy_bc_features(lane_points, history)
        nxt = poses[step + 1]
        local = frame.to_frame(nxt[:2])
        target = np.array([local[0], local[1], frame.heading_to_frame(nxt[2])])
        return feats, target

    # bc_perturb: jitter the current position, return to the path over 5 steps
    jitter = rng.uniform(-BC_PERTURB_JITTER, BC_PERTURB_JITTER, size=2)
    jittered = history.copy()
    jittered[-1, :2] += jitter
    feats, frame = toy_bc_features(lane_points, jittered)
    target = np.zeros((BC_PERTURB_STEPS, 3))
    for k in range(1, BC_PERTURB_STEPS + 1):
        gt = poses[step + k]
        fade = max(0.0, 1.0 - k / BC_PERTURB_BLEND)
        pos = gt[:2] + fade * jitter
        local = frame.to_frame(pos)
        target[k - 1] = (local[0], local[1], frame.heading_to_frame(gt[2]))
    return feats, target.reshape(-1)


def _frame_axes(origins: np.ndarray, anchor) -> tuple[np.ndarray, np.ndarray]:
    d = np.asarray(anchor, dtype=np.float64) - origins
    norms = np.linalg.norm(d, axis=-1, keepdims=True)
    if np.any(norms < 1e-9):
        raise ValueError("frame origin coincides with the anchor")
    x_axis = d / norms
    y_axis = np.stack([-x_axis[..., 1], x_axis[..., 0]], axis=-1)
    return x_axis, y_axis


def _nearest_points_batch(lane_points: np.ndarray, origins: np.ndarray, count: int) -> np.ndarray:
    """Vectorized nearest-`count` lane points per origin, ties by index.

    origins: (..., 2); returns (..., count, 2) ordered closest first,
    matching policy.nearest_lane_points exactly.
    """
    flat = origins.reshape(-1, 2)
    d = np.linalg.norm(flat[:, None, :] - lane_points[None, :, :], axis=-1)
    cand = np.argpartition(d, count - 1, axis=1)[:, :count]
    cand = np.sort(cand, axis=1)  # pre-sort by index so stable sort breaks ties by index
    cand_d = np.take_along_axis(d, cand, axis=1)
    order = np.argsort(cand_d, axis=1, kind="stable")
    chosen = np.take_along_axis(cand, order, axis=1)
    return lane_points[chosen].reshape(*origins.shape[:-1], count, 2)


def assemble_toy_training_arrays(
    logs,
    kind: PolicyKind,
    frame_spec: FrameSpec = TOY_FRAME_SPEC,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """All (features, targets) rows for the dataset, assembled scene by
    scene with vectorized numpy; equivalent to looping make_toy_example
    with the same generator."""
    if rng is None:
        rng = make_rng(frame_spec.rng_seed)
    xs, ys = [], []
    for log in logs:
        lane_points = log.build_graph().start_points()
        poses = log.ego.as_array()
        steps = np.asarray(toy_example_steps(log, kind))
        if steps.size == 0:
            continue
        hist_idx = steps[:, None] - np.arange(TOY_HISTORY - 1, -1, -1)[None, :]  # (E, 10)
        E = steps.size

        if kind is PolicyKind.CONTEXT_ONLY:
            ego_pos = poses[hist_idx][:, :, :2]  # (E, 10, 2)
            noise = rng.normal(0.0, frame_spec.perturb_std, size=(E, TOY_HISTORY, 2))
            origins = ego_pos + noise
            x_axis, y_axis = _frame_axes(origins, log.goal)
            pts = _nearest_points_batch(lane_points, origins, TOY_CONTEXT_POINTS)
            rel = pts - origins[:, :, None, :]
            feats = np.stack(
                [np.einsum("ehpc,ehc->ehp", rel, x_axis), np.einsum("ehpc,ehc->ehp", rel, y_axis)],
                axis=-1,
            ).reshape(E, -1)
            nxt = poses[steps + 1]
            d = nxt[:, :2] - origins[:, -1]
            tx = np.einsum("ec,ec->e", d, x_axis[:, -1])
            ty = np.einsum("ec,ec->e", d, y_axis[:, -1])
            frame_angle = np.arctan2(x_axis[:, -1, 1], x_axis[:, -1, 0])
            target = np.stack([tx, ty, normalize_angle(nxt[:, 2] - frame_angle)], axis=1)
            xs.append(feats)
            ys.append(target)
            continue

        history = poses[hist_idx]  # (E, 10, 3)
        jitter = None
        if kind is PolicyKind.BC_PERTURB:
            jitter = rng.uniform(-BC_PERTURB_JITTER, BC_PERTURB_JITTER, size=(E, 2))
            history = history.copy()
            history[:, -1, :2] += jitter
        current = history[:, -1]
        heading = current[:, 2]
        x_axis = np.stack([np.cos(heading), np.sin(heading)], axis=-1)
        y_axis = np.stack([-x_axis[:, 1], x_axis[:, 0]], axis=-1)

        rel_hist = history[:, :, :2] - current[:, None, :2]
        ego_feats = np.stack(
            [
                np.einsum("ehc,ec->eh", rel_hist, x_axis),
                np.einsum("ehc,ec->eh", rel_hist, y_axis),
                normalize_angle(history[:, :, 2] - heading[:, None]),
            ],
            axis=-1,
        )  # (E, 10, 3)
        pts = _nearest_points_batch(lane_points, current[:, :2], TOY_CONTEXT_POINTS)
        rel_pts = pts - current[:, None, :2]
        ctx_feats = np.stack(
            [np.einsum("epc,ec->ep", rel_pts, x_axis), np.einsum("epc,ec->ep", rel_pts, y_axis)],
            axis=-1,
        )
        feats = np.concatenate([ego_feats.reshape(E, -1), ctx_feats.reshape(E, -1)], axis=1)

        if kind is PolicyKind.BC:
            nxt = poses[steps + 1]
            d = nxt[:, :2] - current[:, :2]
            target = np.stack(
                [
                    np.einsum("ec,ec->e", d, x_axis),
                    np.einsum("ec,ec->e", d, y_axis),
                    normalize_angle(nxt[:, 2] - heading),
                ],
                axis=1,
            )
        else:
            target = np.zeros((E, BC_PERTURB_STEPS, 3))
            for k in range(1, BC_PERTURB_STEPS + 1):
                gt = poses[steps + k]
                fade = max(0.0, 1.0 - k / BC_PERTURB_BLEND)
                pos = gt[:, :2] + fade * jitter
                d = pos - current[:, :2]
                target[:, k - 1, 0] = np.einsum("ec,ec->e", d, x_axis)
                target[:, k - 1, 1] = np.einsum("ec,ec->e", d, y_axis)
                target[:, k - 1, 2] = normalize_angle(gt[:, 2] - heading)
            target = target.reshape(E, -1)
        xs.append(feats)
        ys.append(target)

    if not xs:
        raise ValueError("dataset produced no examples")
    return np.concatenate(xs, axis=0), np.concatenate(ys, axis=0)


@dataclass
class TrainResult:
    policy: object
    curve: list  # (step, loss) samples
    final_loss: float


def train_toy(
    kind: PolicyKind,
    logs,
    config: nn.NetworkConfig = nn.NetworkConfig(),
    learning_rate: float = 1e-4,
    steps: int = 10_000,
    batch_size: int = 32,
    seed: int = 0,
    frame_spec: FrameSpec = TOY_FRAME_SPEC,
    weight_decay: float = 0.0,
    record_every: int = 200,
) -> TrainResult:
    """Train one toy policy; deterministic given the seed.

    The loss is the per-example L1 error summed over output channels and
    averaged over the batch, plus (weight_decay / 2) * ||params||^2.
    """
    rng_init, rng_noise, rng_batch = split_rng(("toy-train", seed), 3)
    features, targets = assemble_toy_training_arrays(logs, kind, frame_spec, rng_noise)
    policy = ToyMlpPolicy(kind, config, rng_init)
    params = policy.parameters()
    opt = nn.Adam(params, learning_rate)
    n = features.shape[0]
    curve = []
    loss_value = float("nan")
    for step in range(steps):
        idx = rng_batch.integers(0, n, size=batch_size)
        xb = nn.constant(features[idx])
        yb = nn.constant(targets[idx])
        out = policy.forward(xb)
        err = nn.tensor_sum(nn.absolute(nn.add(out, nn.mul(yb, -1.0))), axis=1)
        loss = nn.mean(err)
        if weight_decay > 0.0:
            loss = nn.add(loss, nn.l2_regularization(params, weight_decay))
        loss_value = float(loss.value)
        if not np.isfinite(loss_value):
            raise TrainingDiverged(f"loss became non-finite at step {step}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        if step % record_every == 0 or step == steps - 1:
            curve.append((step, loss_value))
    return TrainResult(policy=policy, curve=curve, final_loss=loss_value)


def toy_clean_eval_loss(
    policy: ToyMlpPolicy,
    logs,
    kind: PolicyKind,
    max_examples: int = 2000,
    seed: int = 1,
) -> float:
    """Mean per-example L1 on noise-free frames (std = 0, no jitter).

    Isolates the learned map's accuracy from the irreducible blur the frame
    perturbation puts on the training targets.
    """
    spec = FrameSpec(kind=FrameKind.EGO_PERTURBED_CENTER_ORIENTED, perturb_std=0.0)
    rng = make_rng(("toy-eval", seed))
    kind_for_assembly = PolicyKind.BC if kind is PolicyKind.BC_PERTURB else kind
    features, targets = assemble_toy_training_arrays(logs, kind_for_assembly, spec, rng)
    if features.shape[0] > max_examples:
        keep = rng.choice(features.shape[0], size=max_examples, replace=False)
        features, targets = features[keep], targets[keep]
    pred = policy.predict(features)
    if kind is PolicyKind.BC_PERTURB:
        pred = pred.reshape(pred.shape[0], BC_PERTURB_STEPS, 3)[:, 0, :]
    return float(np.mean(np.sum(np.abs(pred - targets), axis=1)))


def make_full_example(
    log: ScenarioLog,
    graph,
    step: int,
    config: nn.NetworkConfig,
    frame_spec: FrameSpec,
    rng: np.random.Generator,
    limits: ObservationLimits = ObservationLimits(),
) -> tuple[list, np.ndarray]:
    """Full-pipeline example: H observations plus the (H, T, 3) target tensor.

    targets[h, t-1] is the ground-truth pose at absolute step
    (step - h*I + t) expressed in history frame h (h = 0 is the current
    step). Steps without full horizons raise InsufficientHorizon.
    """
    from .sim import history_observations

    H, I, T = config.history_len, config.history_interval, config.future_len
    if step - (H - 1) * I < 0 or step + T > len(log.ego) - 1:
        raise InsufficientHorizon(f"step {step} lacks history or future horizons")
    observations = history_observations(
        log, graph, list(log.ego.poses), step, H, I, frame_spec, limits, rng
    )
    poses = log.ego.as_array()
    targets = np.zeros((H, T, 3))
    for h in range(H):
        frame = observations[H - 1 - h].frame
        for t in range(1, T + 1):
            gt = poses[step - h * I + t]
            local = frame.to_frame(gt[:2])
            targets[h, t - 1] = (local[0], local[1], frame.heading_to_frame(gt[2]))
    return observations, targets


def train_full(
    examples,
    config: nn.NetworkConfig,
    learning_rate: float = 5e-4,
    steps: int = 50,
    batch_size: int = 2,
    seed: int = 0,
    aux_weight: float = 0.3,
    weight_decay: float = 1e-4,
    warmup_steps: int = 0,
    limits: ObservationLimits = ObservationLimits(),
) -> TrainResult:
    """Train the full context network on prebuilt (observations, targets).

    Exercised at reduced scale; the loop is the same machinery the
    large-scale configuration would use (aux-weighted L1 + regularization,
    Adam with warm-up).
    """
    rng_init, rng_batch, rng_drop = split_rng(("full-train", seed), 3)
    network = ContextPolicyNetwork(config, rng_init, limits)
    network.set_training(True)
    params = network.parameters()
    opt = nn.Adam(params, learning_rate, warmup_steps=warmup_steps)
    curve = []
    loss_value = float("nan")
    for step in range(steps):
        idx = rng_batch.integers(0, len(examples), size=batch_size)
        preds, targs = [], []
        for i in idx:
            obs, target = examples[int(i)]
            preds.append(nn.reshape(network.forward(obs, rng=rng_drop), (1, *target.shape)))
            targs.append(target[None])
        pred = nn.concat(preds, axis=0)
        loss = nn.trajectory_loss(pred, np.concatenate(targs, axis=0), aux_weight=aux_weight)
        if weight_decay > 0.0:
            loss = nn.add(loss, nn.l2_regularization(params, weight_decay))
        loss_value = float(loss.value)
        if not np.isfinite(loss_value):
            raise TrainingDiverged(f"loss became non-finite at step {step}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        curve.append((step, loss_value))
    network.set_training(False)
    return TrainResult(policy=network, curve=curve, final_loss=loss_value)


# ---------------------------------------------------------------------------
# Checkpoints: self-describing JSON with exact round trip.

CHECKPOINT_FORMAT = "drivelab-checkpoint-v1"


def rng_state_to_json(rng: np.random.Generator) -> dict:
    state = rng.bit_generator.state

    def convert(obj):
        if isinstance(obj, dict):
            return {k: convert(v) for k, v in obj.items()}
        if isinstance(obj, np.ndarray):
            return {"__ndarray__": obj.tolist(), "dtype": str(obj.dtype)}
        if isinstance(obj, (np.integer,)):
            return int(obj)
        return obj

    return convert(state)


def rng_state_from_json(doc: dict):
    def convert(obj):
        if isinstance(obj, dict):
            if "__ndarray__" in obj:
                return np.asarray(obj["__ndarray__"], dtype=obj["dtype"])
            return {k: convert(v) for k, v in obj.items()}
        return obj

    return convert(doc)


def save_checkpoint(path, policy, optimizer: nn.Adam | None = None, rng: np.random.Generator | None = None, extra: dict | None = None):
    if isinstance(policy, ToyMlpPolicy):
        model = {"family": "toy", "kind": policy.kind.value, "config": policy.config.to_json()}
    elif isinstance(policy, ContextPolicyNetwork):
        model = {
            "family": "context",
            "kind": PolicyKind.CONTEXT_ONLY.value,
            "config": policy.config.to_json(),
            "limits": asdict(policy.limits),
        }
    else:
        raise TypeError(f"cannot checkpoint {type(policy)!r}")
    doc = {
        "format": CHECKPOINT_FORMAT,
        "model": model,
        "params": {name: p.value.tolist() for name, p in policy.named_parameters().items()},
        "optimizer": None if optimizer is None else optimizer.state_dict(),
        "rng_state": None if rng is None else rng_state_to_json(rng),
        "extra": extra or {},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)


def load_checkpoint(path) -> dict:
    """Rebuild the model (and optimizer state when present) from disk.

    Returns {"policy", "optimizer", "rng", "extra"}; the parameter tensors
    round-trip exactly (floats serialize via repr).
    """
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"not a {CHECKPOINT_FORMAT} file")
    model = doc["model"]
    config = nn.NetworkConfig.from_json(model["config"])
    if model["family"] == "toy":
        policy = ToyMlpPolicy(PolicyKind(model["kind"]), config, make_rng(0))
    else:
        policy = ContextPolicyNetwork(config, make_rng(0), ObservationLimits(**model["limits"]))
    named = policy.named_parameters()
    if set(named) != set(doc["params"]):
        raise ValueError("checkpoint parameters do not match the model")
    for name, values in doc["params"].items():
        named[name].value = np.asarray(values, dtype=np.float64).reshape(named[name].value.shape)
    optimizer = None
    if doc["optimizer"] is not None:
        optimizer = nn.Adam(policy.parameters(), doc["optimizer"]["learning_rate"])
        optimizer.load_state_dict(doc["optimizer"])
    rng = None
    if doc["rng_state"] is not None:
        rng = make_rng(0)
        rng.bit_generator.state = rng_state_from_json(doc["rng_state"])
    return {"policy": policy, "optimizer": optimizer, "rng": rng, "extra": doc.get("extra", {})}
