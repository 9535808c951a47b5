"""obflab: a laboratory for on-device model protection experiments.

Pieces: a small inference-graph IR with a weight store and an on-disk
container format, a hooked interpreter, static obfuscation passes
(renaming, weight encapsulation, extra-operator injection), a coupled
scale-transformation pass that survives value-level probing, a dynamic
instrumentation attack that tries to undo all of it, and the metrics
that score the fight.
"""

from .ir import (
    Activation,
    BoundParams,
    ConvParams,
    Graph,
    OperatorKind,
    OperatorNode,
    PoolParams,
    ReshapeParams,
    ShapeError,
    WeightStore,
    bounded_activation,
    conv_output_shape,
    input_ref,
    relu_activation,
    validate,
)
from .container import ContainerError, deserialize, serialize
from .interpreter import HookSet, TraceRecorder, execute, run
from .static_obf import GroundTruthMap, StaticObfConfig, apply_static
from .coupling import ObfuscationPair, ObfuscationPlan, apply_pair, couple, find_coupled_candidates
from .explorer import AttackContext, RecoveredModel, TraceStats, run_attack
from .metrics import MetricsReport, Ratio, ThetaResult, compute_metrics, compute_theta, format_report_table
from .zoo import ZOO_MODEL_IDS, ZooSpec, build_model, build_zoo, random_zoo_model
from .pipeline import RunConfig, derive_seed, run_pipeline

__version__ = "0.1.0"
