"""Regularized EM for Gaussian mixtures with KL shrinkage of cluster covariances."""

__version__ = "0.1.0"

from .em import FitConfig, FitReport, Responsibilities, TraceRecord, e_step, fit, m_step
from .errors import (
    ClusterCollapse,
    DegenerateData,
    EmptyCluster,
    InvalidParam,
    KMismatch,
    LengthMismatch,
    NotPositiveDefinite,
    RgemError,
)
from .kmeans import kmeans, kmeans_init
from .model import (
    Dataset,
    GmmParams,
    PenaltyConfig,
    log_component_density,
    log_likelihood,
    penalized_log_likelihood,
    read_csv,
    write_csv,
)
from .shrinkage import CvConfig, cv_select_eta, make_target
from .spd import SpdMatrix, frobenius_dist, kl_penalty, log_det, make_spd, solve_quad, solve_trace
from .synth import ScenarioSpec, ar1_cov, match_clusters, nmi, sample_gmm, sphere_means
