"""Static multi-policy access-control triage for Android-style snapshots."""

from .access import AccessIndex, can_access, dac_allows, mls_allows, te_allows
from .adversary import (
    DEFAULT_CLASSIFIER,
    LevelClassifier,
    LevelRule,
    PrivilegeLevel,
    TrustReport,
    assign_privilege_levels,
    compute_adversaries,
    compute_integrity_wall,
    compute_kernel_writers,
    parse_levels_conf,
)
from .expansion import (
    DelegationTarget,
    ExpandedSubject,
    adversary_expand,
    victim_expansion_targets,
)
from .generator import GeneratorSpec, generate_system
from .ingest import IdResolver, build_snapshot
from .ivengine import (
    IntegrityViolation,
    IvKind,
    PipelineResult,
    TeIv,
    build_context,
    compute_pathname_ivs,
    compute_te_ivs,
    run_pipeline,
    validate_te_ivs,
)
from .model import (
    AccessKind,
    AnalysisConfig,
    ConfigError,
    DacIdentity,
    IngestError,
    InconsistencyError,
    IpcMap,
    MacAllowRule,
    MountTable,
    ObjectEntity,
    PermVocabulary,
    Subject,
    SystemSnapshot,
    load_analysis_config,
)
from .operations import (
    AttackOperation,
    OpType,
    compute_attack_operations,
    fs_writable,
    symlink_allowed,
)
from .oracle import OracleResult, brute_force, brute_force_ivs, brute_force_ops, check_equivalence
from .report import (
    ReportDelta,
    TriageReport,
    apply_delta,
    count_authorized_data_flows,
    cross_level_matrix,
    diff_reports,
    render,
    summarize,
)

__version__ = "0.1.0"
