"""Probabilistic latent-variable models for sparse count matrices.

Four generative models (mixed-membership topics, hard cluster mixtures,
time-drifting log-linear frequencies, and gamma-Poisson factorization with
optional zero inflation) with matched simulators, posterior inference
engines, topic alignment, posterior predictive checks, and a simulation-study
harness. All randomness flows through a counter-based splittable generator,
so every result is bit-reproducible from a seed.
"""

from .align import (
    TopicPermutation,
    align_topics,
    apply_alignment,
    normalize_gap_scale,
    normalize_scale_arrays,
)
from .corpus import CountMatrix, Taxonomy, filter_features, library_sizes, read_counts, write_counts
from .exceptions import (
    BoundsError,
    ConfigError,
    DomainError,
    NumericalError,
    ParseError,
    PlvmError,
)
from .gap import (
    GapParams,
    ZeroMask,
    fit_gap_cavi,
    fit_gap_gibbs,
    gap_log_likelihood,
    hyperparams_for_expected_total,
    simulate_gap,
)
from .inference import (
    CaviOptions,
    McmcOptions,
    PosteriorSamples,
    diagnostics,
    ess,
    parametric_bootstrap,
    posterior_quantiles,
    split_rhat,
    summarize_posterior,
)
from .lda import (
    DmmParams,
    LdaParams,
    fit_dmm_gibbs,
    fit_lda_cavi,
    fit_lda_gibbs,
    lda_log_likelihood,
    simulate_dmm,
    simulate_lda,
)
from .numeric import Rng, g_transform, log_sum_exp, softmax
from .ppc import (
    PcaSummary,
    PpcReport,
    draw_posterior_predictive,
    ppc_pca,
    ppc_quantile_qq,
    ppc_scalar_stats,
    ppc_timeseries,
    procrustes_align,
    species_discrepancy,
    write_ppc_reports,
)
from .report import (
    export_plot_data,
    family_representativeness,
    representativeness_table,
    topic_representativeness,
)
from .simstudy import (
    CellResult,
    ExperimentGrid,
    default_desk_grid,
    rmse_sqrt_medians,
    run_study,
    sd_along_first_topic,
)
from .unigram import (
    AdviOptions,
    HmcOptions,
    UnigramState,
    fit_unigram,
    simulate_unigram,
    unigram_grad,
    unigram_log_posterior,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
