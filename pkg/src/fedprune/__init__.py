"""Federated structured pruning: a deterministic numpy simulator."""
from .config import ConfigError, RunConfig, load_config, parse_config, render_config
from .data import Dataset, Generator, Partition, SynthSpec, gen_synthetic, partition_clients
from .engine import (
    Client,
    ClientUpdate,
    PruningSetup,
    RoundState,
    TrainHyper,
    aggregate,
    client_local_update,
    enter_finetune,
    initial_state,
    run_experiment,
    run_finetune_round,
    run_round,
)
from .importance import ImportanceTable, Method, MomentumState, Norm, compute_scores, slice_norm, update_momentum
from .masks import (
    PackedModel,
    Pattern,
    SliceMask,
    decode_packed,
    encode_packed,
    enumerate_slices,
    expand,
    generate_mask,
    payload_nbytes,
    propagate_induced_zeros,
    shrink,
    zero_param_ratio,
)
from .metrics import RoundRecord, read_metrics, report, write_metrics
from .model import Activation, Mlp, MlpConfig
from .schedule import (
    Allocation,
    LayerStat,
    Phase,
    Schedule,
    SparsityPlan,
    allocate_per_layer,
    current_sparsity,
    phase_of,
    quantize_slice_count,
)
from .var_store import Role, VarSpec, VarStore, canonical_2d_view, load_checkpoint, save_checkpoint

__version__ = "0.1.0"
