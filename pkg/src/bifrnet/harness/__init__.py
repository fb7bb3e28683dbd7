"""Evaluation grids, ablations and exports."""

from .ablation import (
    RETRAIN_KINDS,
    VARIANT_NAMES,
    AblationReport,
    ablate_completion_cutoff,
    ablate_knowledge_noise,
    knowledge_noise,
    noise_variant_name,
    retrain_variant,
)
from .evaluation import (
    GRID_CELLS,
    EvalGrid,
    MissingCellError,
    eval_grid,
    grid_from_predictions,
    predict_labels,
    render_table,
    run_batched,
    write_report,
)
from .export import (
    AttentionStats,
    SimilarityMatrix,
    attention_maps,
    attention_stats,
    cosine_similarity,
    export_attention,
    export_similarity,
    mask_iou,
    read_pnm,
    upsample_nearest,
    write_pgm,
    write_ppm,
)
