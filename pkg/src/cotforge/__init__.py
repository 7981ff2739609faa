"""cotforge: curation toolkit for chain-of-thought training corpora.

Turns a seed pool of multimodal question-answer records into a filtered,
annotated, diversity-sampled reasoning corpus: stratified sampling, teacher
trace generation, joint difficulty/quality/tag scoring, rule-based filtering,
threshold selection, and farthest-point diversity sampling, with manifests at
every stage.
"""

from .annotate import ScorerConfig, annotate, extract_json_object, render_scorer_prompt
from .config import ConfigError, RunConfig, config_hash, load_config
from .distill import (
    TeacherConfig,
    TraceParseError,
    count_tokens,
    distill,
    parse_structured_trace,
    render_teacher_prompt,
)
from .gateway import (
    ChatMessage,
    ChatRequest,
    ChatResponse,
    EmbeddingBatch,
    Endpoint,
    Gateway,
    GatewayError,
    RetryPolicy,
)
from .mock_gateway import MockModelService, mock_gateway, serve_mock
from .pipeline import resume, run_pipeline
from .quality import Stage1Config, stage1_filter
from .records import (
    Annotation,
    CuratedRecord,
    DistilledTrace,
    PipelineManifest,
    RejectCode,
    RejectReason,
    SeedSample,
    StageStamp,
    Status,
    decode_record,
    encode_record,
    stable_id,
)
from .sampling import SamplingPlan, ingest, stratified_sample
from .selection import (
    ClusteringConfig,
    SelectionStrategy,
    SubsetSpec,
    TagClusterModel,
    build_subset,
    build_tag_cluster_model,
    dbscan,
    farthest_point_sampling,
    filter_by_tags,
    reasoning_profile,
    select_by_strategy,
)
from .stats import compute_distribution, compute_tag_frequency, decode_report, render_report

__version__ = "0.1.0"
