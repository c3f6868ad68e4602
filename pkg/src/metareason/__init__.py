"""Meta-reasoning transition modelling for reasoning traces.

Label taxonomy and trace model, polarity curation, annotation consolidation,
set-valued EM estimation of transition matrices, transition-advantage weights
with KTO-style losses, and factual-QA metrics.
"""

from .errors import ValidationError
from .estimation import (
    EMConfig,
    EMResult,
    MatrixSet,
    TransitionMatrix,
    build_structural_mask,
    em_estimate,
    estimate_partitioned,
    log_likelihood,
    pairwise_prob,
)
from .reward import (
    ClipBounds,
    KTOParams,
    LogRatioRecord,
    WeightProfile,
    batch_loss,
    implicit_reward,
    segment_weight,
    subjective_value,
    update_baseline,
    weight_profile,
)
from .taxonomy import (
    LABELS,
    NUM_STATES,
    START,
    STATE_NAMES,
    STOP,
    LabelSet,
    MetaLabel,
    Polarity,
    ReasoningTrace,
    Segment,
    TransitionObservation,
)

__version__ = "0.1.0"
