"""pmbtrack: tracking-by-detection multi-object tracking with a GNN-PMB
filter (single-best-global-hypothesis Poisson multi-Bernoulli), a PMBM
baseline, AMOTA-family evaluation, and a synthetic-scene simulator.
"""

from .association import (
    CostMatrix,
    GlobalHypothesis,
    build_cost_matrix,
    enumerate_hypotheses,
    hungarian_solve,
    murty_kbest,
)
from .filter import (
    FilterParams,
    FrameResult,
    assign_track_ids,
    extract,
    initial_posterior,
    predict,
    prune,
    step,
    track_frames,
    update,
)
from .metrics import (
    GroundTruthBox,
    MatchConfig,
    PredBox,
    accumulate,
    amota,
    amotp,
    evaluate_class,
    match_frame,
    mota,
    motar,
    motp,
    recall_sweep,
)
from .mn_baseline import MnTrackerState, gnn_mn_baseline_step
from .models import (
    MeasurementModel,
    ModelParams,
    Models,
    MotionModel,
    clutter_intensity,
    gate,
    kalman_predict,
    kalman_update,
    mahalanobis_distance,
    make_birth_intensity,
)
from .pmbm import initial_pmbm_posterior, pmbm_step
from .preprocess import Box3D, iou_3d, nms, score_filter
from .sim import SimConfig, simulate
from .state import (
    BernoulliComponent,
    Detection,
    FrameDetections,
    GaussianDensity,
    GaussianMixture,
    PassthroughState,
    PmbPosterior,
    PmbmPosterior,
    TrackOutput,
    validate_posterior,
)

__version__ = "0.1.0"
