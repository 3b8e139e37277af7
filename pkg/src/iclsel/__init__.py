"""Validation-calibrated demonstration selection for in-context learning.

Pipeline: retrieve candidate demonstrations for each test input (BM25 or
precomputed embeddings), hold out the most similar one as a query-specific
validation example, score the rest with a preference-calibrated validation
loss, and concatenate the best n into the prompt. Ships the selection
strategies, simple baselines, a model-agnostic log-probability backend
interface (mock / toy / HTTP), metrics, and an evaluation CLI.
"""

from .backends import (
    CachedBackend,
    ContextUnigramBackend,
    HttpBackend,
    LogProbBackend,
    MockBackend,
    TokenLogProbs,
    UnigramBackend,
    normalized_total,
)
from .corpus import (
    Dataset,
    Example,
    TaskTemplate,
    example_text,
    load_dataset,
    load_template,
    render_demo,
    render_query,
    verbalizations,
    verbalizations_for,
)
from .errors import (
    BackendError,
    ConfigError,
    DatasetError,
    IclSelError,
    MockMissError,
    ProtocolError,
    RetrievalError,
    SelectionError,
    TemplateError,
)
from .evaluation import (
    Prompt,
    Report,
    assemble_prompt,
    classify,
    corpus_bleu,
    exact_match,
    f1_token,
    run_experiment,
)
from .retrieval import (
    Bm25Provider,
    EmbeddingProvider,
    EmbeddingStore,
    bm25_score,
    build_bm25,
    cosine,
    load_embeddings,
    retrieve_top_k,
    tokenize,
)
from .selection import (
    Candidate,
    CandidateSet,
    DvaSelection,
    OracleScore,
    ScoredCandidate,
    SelectionConfig,
    ValidationSplit,
    bt_preference,
    calibration_remainder,
    dva_score,
    make_candidate_set,
    oracle_select,
    select_baseline,
    select_dva,
    split_validation,
    validation_loss,
)

__version__ = "0.1.0"
