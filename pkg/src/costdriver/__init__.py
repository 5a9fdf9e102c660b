"""costdriver: detect, decompose, and rank emerging cost drivers in
hierarchical claims data."""

from .detect import (
    CusumConfig,
    CusumMode,
    DetectionResult,
    Direction,
    NullKind,
    NullModel,
    ReportingRule,
    ThresholdSearch,
    cusum,
    fit_null,
    learn_threshold,
    simulate_null,
)
from .hierarchy import (
    DrillPath,
    KpiPanel,
    NormalizedSeries,
    ViewpointSpec,
    WindowSpec,
    aggregate,
    build_claims_frame,
    build_member_months,
    build_panels,
    enumerate_paths,
    yoy_normalize,
)
from .impact import (
    ImpactBreakdown,
    ImpactConfig,
    decompose_price_utilization,
    decompose_utilization,
    ewa,
    impact_breakdown,
    impact_total,
)
from .offsets import (
    ComparabilityBasis,
    ComparabilityKB,
    ComparableGroup,
    MigrationFlows,
    OffsetNetwork,
    TreatmentSignal,
    compute_migration,
    identify_offsets,
    load_kb,
    offset_cost_impact,
    save_kb,
)
from .patterns import PatternLabel, characterize
from .pipeline import (
    ConfigError,
    PipelineConfig,
    StageError,
    load_pipeline_config,
    run_pipeline,
    run_stage,
)
from .records import (
    ClaimRecord,
    ClaimType,
    EnrollmentRecord,
    EpisodeLabel,
    EpisodeRuleTable,
    ParseError,
    assign_episodes,
    parse_claims,
    parse_enrollment,
    serialize_claims,
    serialize_enrollment,
)
from .synthetic import (
    ConditionSpec,
    GroundTruth,
    Injection,
    InjectionShape,
    OffsetScript,
    RateComponent,
    SyntheticScenario,
    TreatmentSpec,
    generate_synthetic,
    load_scenario,
    scenario_from_dict,
)

__version__ = "0.1.0"
