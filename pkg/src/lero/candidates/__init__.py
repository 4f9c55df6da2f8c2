from lero.candidates.engine import (
    BUILTIN_NAMES,
    Candidate,
    CandidateRuntimeFault,
    EnhancementOutput,
    HybridRewardSpec,
    Kind,
    ObservationHistory,
    Status,
    builtin,
    builtin_candidate,
    builtin_source,
    enhance_observations,
    eval_hybrid_reward,
    eval_oef,
    parse_candidate,
    validate,
)
from lero.candidates.script import Program, RuntimeFault, ScriptError

__all__ = [
    "BUILTIN_NAMES",
    "Candidate",
    "CandidateRuntimeFault",
    "EnhancementOutput",
    "HybridRewardSpec",
    "Kind",
    "ObservationHistory",
    "Program",
    "RuntimeFault",
    "ScriptError",
    "Status",
    "builtin",
    "builtin_candidate",
    "builtin_source",
    "enhance_observations",
    "eval_hybrid_reward",
    "eval_oef",
    "parse_candidate",
    "validate",
]
