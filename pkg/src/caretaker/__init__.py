"""Continual household instruction following with a temporal graph memory,
belief-driven exploration, and integrated skill planning."""

from importlib import resources as _resources
from pathlib import Path

from .embedding import EmbeddingBackend, HashedTrigramEmbedder
from .gridhome import (
    NonStationaritySchedule,
    Observation,
    Skill,
    SkillOutcome,
    World,
    load_scene,
)
from .harness import (
    EpisodeConfig,
    EpisodeTrace,
    Metrics,
    compute_ps,
    compute_sr,
    generate_demos,
    run_episode,
    sweep,
)
from .instructions import (
    ContinualInstruction,
    Execution,
    InstructionParser,
    InstructionSet,
    Query,
    SceneLexicon,
    parse,
    parse_set,
)
from .planner import (
    Demonstration,
    PlannerWeights,
    SkillValue,
    exploitation_value,
    exploration_value,
    retrieve_demos,
    select_skill,
)
from .query_eval import (
    QueryBelief,
    ScriptedEvaluatorBackend,
    binary_entropy,
    evaluate,
    refine_prior,
    select_executions,
)
from .tekg import MemoryGraph, Quadruple, contradicts

__version__ = "0.1.0"


def data_path(name: str) -> Path:
    """Path to a bundled scene or instruction file (e.g. 'gridhome_small.json')."""
    return Path(str(_resources.files("caretaker").joinpath("data", name)))


__all__ = [
    "ContinualInstruction",
    "Demonstration",
    "EmbeddingBackend",
    "EpisodeConfig",
    "EpisodeTrace",
    "Execution",
    "HashedTrigramEmbedder",
    "InstructionParser",
    "InstructionSet",
    "MemoryGraph",
    "Metrics",
    "NonStationaritySchedule",
    "Observation",
    "PlannerWeights",
    "Quadruple",
    "Query",
    "QueryBelief",
    "SceneLexicon",
    "ScriptedEvaluatorBackend",
    "Skill",
    "SkillOutcome",
    "SkillValue",
    "World",
    "binary_entropy",
    "compute_ps",
    "compute_sr",
    "contradicts",
    "data_path",
    "evaluate",
    "exploitation_value",
    "exploration_value",
    "generate_demos",
    "load_scene",
    "parse",
    "parse_set",
    "refine_prior",
    "retrieve_demos",
    "run_episode",
    "select_executions",
    "select_skill",
    "sweep",
]
