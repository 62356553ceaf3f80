"""drivelab: a desk-scale lab for context-conditioned driving policies.

The pieces: SE(2) geometry and oriented-box collision, vectorized map
graphs with travel-distance queries, ego-perturbed anchor-oriented frames,
a from-scratch differentiable learner, policy formulations that do or do
not see the ego track, finite-horizon LQR smoothing, log-replay and
ring-road simulators, closed-loop metrics, and a linear-systems stability
toolkit with small-gain certificates.
"""

__version__ = "0.1.0"

from .frames import Frame, FrameKind, FrameSpec, frame_per_history_step, make_frame, make_rng, split_rng
from .geometry import (
    OrientedBox,
    Pose2,
    Trajectory,
    finite_difference_derivatives,
    normalize_angle,
    obb_intersects,
    transform_from_frame,
    transform_to_frame,
)
from .lqr import LqrProblem, LqrWeights, SmoothPlan, prepare_initial_state
from .mapgraph import (
    MapData,
    MapVector,
    PolygonKind,
    PolygonSpec,
    PolylineSpec,
    TrafficLight,
    VectorMapGraph,
    build_graph,
    corridor_map,
    intersection_map,
    load_map,
    ring_map,
    save_map,
    vectorize_polyline,
)
from .metrics import SceneMetrics, aggregate, evaluate_scene
from .policy import (
    ContextPolicyNetwork,
    ObservationFrame,
    ObservationLimits,
    PolicyKind,
    PosePrediction,
    ToyMlpPolicy,
    assemble_observation,
)
from .sim import (
    AgentTrack,
    ContextPolicyPlanner,
    NoisyOraclePlanner,
    OraclePlanner,
    RolloutRecord,
    ScenarioLog,
    ToyPlanner,
    load_scenarios,
    make_corridor_scenario,
    make_ring_scenario,
    run_log_replay,
    run_toy_rollout,
    save_scenarios,
)
from .stability import (
    LinearSubsystem,
    PolicyGain,
    bc_instability_witness,
    certify_closed_loop,
    induced_norm2,
    policy_norm_bound,
    simulate_linear,
    spectral_radius,
)
from .training import build_toy_dataset, load_checkpoint, save_checkpoint, train_toy
