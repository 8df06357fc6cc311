"""partlat: part-aware joint latent denoising toolkit.

Library + CLI covering part latent bundles, language-derived semantic
tokens, relation canonicalization and validation, joint DDIM denoising
with part/object synchronization, part editing via inversion, rigid
articulation fitting, and point-cloud geometry metrics.
"""

__version__ = "0.1.0"

from .articulate import RigidTransform, apply_transform, fit_rigid, interpolate, reassemble
from .config import DEFAULTS, RunConfig, load_config, save_config
from .denoise import (
    AnalyticGaussianDenoiser,
    DenoiserBundle,
    DenoiseState,
    LatentDims,
    NoiseSchedule,
    ReferenceMlpDenoiser,
    SyncCoefficients,
    ZeroDenoiser,
    ddim_invert,
    denoise_step,
    diffusion_loss,
    edit_part,
    forward_noise,
    inter_part_sync,
    intra_part_sync,
    make_schedule,
    sample,
    scene_refine,
    snr_weight,
    train_reference,
)
from .errors import ConfigError, DimensionError, FormatError, InputError, NumericError, PartlatError
from .latent_math import AttentionParams, attention, pool_part, residual_update
from .metrics import (
    VoxelGrid,
    chamfer,
    emd,
    emd_entropic,
    emd_exact,
    fscore,
    pairwise_iou,
    voxelize,
)
from .parts import (
    IdentityTable,
    ObjectLatents,
    PartLatent,
    apply_identity,
    make_part_latent,
    permute_parts,
    read_pltf,
    write_pltf,
)
from .relations import (
    Aabb,
    CorpusObject,
    Predicate,
    RelationalTriplet,
    ValidationThresholds,
    canonicalize,
    compute_aabb,
    dataset_stats,
    map_predicate,
    ood_splits,
    parse_clauses,
    resolve_entities,
    validate_triplet,
)
from .semantics import (
    Embedder,
    GlobalTokens,
    LocalTokens,
    SemanticLatents,
    encode_global,
    encode_local,
    hash_embed,
)
