from .embedding import (
    DEFAULT_PROMPT_PAIRS,
    GaussianSummary,
    ImageTextEmbedder,
    clip_iqa,
    fid,
    frechet_distance,
    layer_embedder,
    lpips,
)
from .signal import CONSTANTS, PSNR_CAP_DB, MetricWarning, SignalConstants, psnr, rase, scc, ssim, total_variation, vif
from .suite import (
    ALL_METRICS,
    DIRECTIONS,
    HIGHER,
    LOWER,
    MetricReport,
    evaluate_pairs,
    normalized_view,
    write_metric_csv,
    write_metric_directions,
)
