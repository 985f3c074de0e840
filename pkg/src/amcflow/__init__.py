"""Absorbing-chain information-flow analysis and adjusted decoding."""

from .chain import (
    DEFAULT_DELTA_ABS,
    DEFAULT_SCORE_CAP,
    AbsorbingDecomposition,
    ContextTransitionMatrix,
    FundamentalMatrix,
    InfoProfile,
    VisitationMatrix,
    decompose,
    fundamental,
    info_loss,
    info_scores,
    mc_visitation_oracle,
    profile_from_visitation,
    visitation,
)
from .decoding import (
    DEFAULT_LAMBDA,
    LAMBDA_GRID,
    AdjustedDistribution,
    ContinuationScore,
    DistributionDigest,
    GenerationStep,
    GenerationTrace,
    adjusted_distribution,
    argmax_token,
    generate,
    score_continuation,
)
from .errors import (
    AmcflowError,
    ConfigurationError,
    DatasetError,
    GenerationAborted,
    InvariantViolation,
    ProviderError,
)
from .harness import (
    EvalReport,
    ItemResult,
    MaskRow,
    MaskSpec,
    MaskTable,
    McItem,
    eval_mc,
    evaluate_items,
    inspect_context,
    inspect_to_csv,
    inspect_to_json,
    load_dataset,
    mask_experiment,
    prepare_provider,
)
from .providers import (
    EOS_TOKEN,
    MASK_TOKEN,
    HttpProvider,
    NgramProvider,
    PrefixDistribution,
    ProviderDescriptor,
    SerializingProvider,
    TableProvider,
    TokenSequence,
    Vocabulary,
    batch_prefix_distributions,
    next_distribution,
    tokenize,
    train_ngram,
)
from .transition import (
    BuildPolicy,
    ContextAnalysis,
    analyze_context,
    build_transition_matrix,
)

__version__ = "0.1.0"
