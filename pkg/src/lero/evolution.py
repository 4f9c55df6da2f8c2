"""LLM-in-the-loop search over (reward, observation) candidate pairs.

Each round asks the provider for fresh reward and enhancement scripts,
validates them, trains one agent team per pair, ranks the pairs by native
coverage, keeps the best ``population_size`` as elites and turns them into
feedback prompts for the next round. Every completed round is written to
``generations/NNN.json`` so an interrupted run resumes where it stopped.
"""

from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from lero import particle_env as pe
from lero.candidates.engine import (
    Candidate,
    HybridRewardSpec,
    Kind,
    Status,
    builtin_candidate,
    parse_candidate,
    validate,
)
from lero.llm import LlmRequest, NoCodeBlock, Provider, RecordingProvider, extract_code
from lero.marl.train import EvalReport, TrainerSpec, train

log = logging.getLogger(__name__)

FALLBACK = {Kind.HRF: "reward_v0", Kind.OEF: "oef_v0"}
PLACEHOLDERS = (
    "task_description",
    "scenario_obs_code",
    "scenario_state_code",
    "task_reward_signature_string",
    "function_signature",
    "eval_result",
    "global_information_advice",
)
_PLACEHOLDER_RE = re.compile(r"\{(" + "|".join(PLACEHOLDERS) + r")\}")


# ---------------------------------------------------------------------------
# Prompt templates
# ---------------------------------------------------------------------------


def template_text(name: str) -> str:
    return (resources.files("lero") / "templates" / f"{name}.txt").read_text(encoding="utf-8")


def template_names() -> list[str]:
    return sorted(p.name[:-4] for p in (resources.files("lero") / "templates").iterdir() if p.name.endswith(".txt"))


class UnboundPlaceholder(KeyError):
    pass


def fill(text: str, bindings: dict[str, str]) -> str:
    """Single-pass substitution of ``{name}`` placeholders.

    Inserted values are not rescanned, so code containing braces is safe.
    """

    def sub(m: re.Match) -> str:
        key = m.group(1)
        if key not in bindings:
            raise UnboundPlaceholder(key)
        return bindings[key]

    return _PLACEHOLDER_RE.sub(sub, text)


def unresolved(text: str) -> list[str]:
    return _PLACEHOLDER_RE.findall(text)


@dataclass(frozen=True)
class PromptTemplate:
    kind: Kind
    system: str
    user: str
    feedback: str

    @classmethod
    def load(cls, kind: Kind | str) -> "PromptTemplate":
        kind = Kind(kind)
        prefix = "reward" if kind is Kind.HRF else "oef"
        return cls(kind, *(template_text(f"{prefix}_{part}") for part in ("system", "user", "feedback")))

    @property
    def placeholders(self) -> set[str]:
        return set(unresolved(self.system + self.user + self.feedback))

    def render(self, bindings: dict[str, str], with_feedback: bool) -> tuple[str, str]:
        """(system, user) messages; the feedback section follows the user text."""
        system = fill(self.system, bindings)
        user = fill(self.user, bindings)
        if with_feedback:
            user = user + "\n" + fill(self.feedback, bindings)
        return system, user


def scenario_bindings(config: pe.ScenarioConfig, kind: Kind | str) -> dict[str, str]:
    """Task and API descriptions for one scenario; ``eval_result`` is left out."""
    kind = Kind(kind)
    name = config.kind.value
    numbers = {
        "n_agents": str(config.n_agents),
        "n_landmarks": str(config.n_landmarks),
        "horizon": str(config.horizon),
        "obs_len": str(config.obs_len),
        "coverage_radius": f"{pe.COVERAGE_RADIUS:g}",
        "collision_radius": f"{pe.COLLISION_RADIUS:g}",
    }

    def text(name: str) -> str:
        return template_text(name).format(**numbers).rstrip("\n")

    reward_sig = template_text("reward_signature").rstrip("\n")
    return {
        "task_description": text(f"task_{name}"),
        "scenario_obs_code": text("obs_common") + "\n" + text(f"obs_{name}"),
        "scenario_state_code": text("state_common") + "\n" + text(f"obs_{name}"),
        "task_reward_signature_string": "\n" + reward_sig + "\n",
        "function_signature": reward_sig if kind is Kind.HRF else template_text("oef_signature").rstrip("\n"),
        "global_information_advice": text(f"advice_{name}"),
    }


# ---------------------------------------------------------------------------
# Selection
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SelectorStrategy:
    kind: str = "topk"
    k: int = 2
    size: int = 2
    pressure: float = 2.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ("topk", "tournament", "rank"):
            raise ValueError(f"unknown selector {self.kind!r}")
        if self.kind == "topk" and self.k < 1:
            raise ValueError("TopK needs k >= 1")
        if self.kind == "tournament" and self.size < 2:
            raise ValueError("Tournament needs size >= 2")
        if self.kind == "rank" and not 1.0 < self.pressure <= 2.0:
            raise ValueError("RankBased pressure must lie in (1, 2]")

    @classmethod
    def top_k(cls, k: int) -> "SelectorStrategy":
        return cls("topk", k=k)

    @classmethod
    def tournament(cls, size: int, seed: int = 0) -> "SelectorStrategy":
        return cls("tournament", size=size, seed=seed)

    @classmethod
    def rank_based(cls, pressure: float = 2.0, seed: int = 0) -> "SelectorStrategy":
        return cls("rank", pressure=pressure, seed=seed)

    @classmethod
    def parse(cls, text: str, seed: int = 0) -> "SelectorStrategy":
        """``topk:2``, ``tournament:3`` or ``rank:1.5``."""
        name, _, arg = text.partition(":")
        if name == "topk":
            return cls.top_k(int(arg or 2))
        if name == "tournament":
            return cls.tournament(int(arg or 2), seed)
        if name == "rank":
            return cls.rank_based(float(arg or 2.0), seed)
        raise ValueError(f"unknown selector {text!r}")

    def describe(self) -> str:
        return {"topk": f"topk:{self.k}", "tournament": f"tournament:{self.size}", "rank": f"rank:{self.pressure:g}"}[self.kind]


def rank_key(report: EvalReport) -> tuple:
    """Sort key: Ok before Failed, coverage desc, native reward desc, pair id."""
    return (not report.ok, -report.coverage_rate, -report.cumulative_native_reward, report.pair_id)


def score(reports: Sequence[EvalReport]) -> list[EvalReport]:
    return sorted(reports, key=rank_key)


def rank_probabilities(n: int, pressure: float) -> np.ndarray:
    """Linear ranking: p(r) = ((2 - s) + 2 (s - 1) (n - 1 - r) / (n - 1)) / n, r = 0 best."""
    if n == 1:
        return np.ones(1)
    r = np.arange(n)
    return ((2.0 - pressure) + 2.0 * (pressure - 1.0) * (n - 1 - r) / (n - 1)) / n


def select(
    ranked: Sequence[EvalReport],
    strategy: SelectorStrategy,
    population_size: int,
    rng: np.random.Generator | None = None,
) -> list[EvalReport]:
    """Choose ``population_size`` elites (fewer if the pool is smaller) from a ranked list."""
    if not ranked:
        raise ValueError("nothing to select from")
    rng = rng if rng is not None else np.random.default_rng(strategy.seed)
    count = min(population_size, len(ranked))
    if strategy.kind == "topk":
        return list(ranked[: min(strategy.k, len(ranked))])
    pool = list(range(len(ranked)))
    chosen: list[int] = []
    if strategy.kind == "tournament":
        while len(chosen) < count:
            entrants = rng.choice(pool, size=min(strategy.size, len(pool)), replace=False)
            winner = int(min(entrants))
            chosen.append(winner)
            pool.remove(winner)
    else:
        probs = rank_probabilities(len(ranked), strategy.pressure)
        while len(chosen) < count:
            p = probs[pool] / probs[pool].sum()
            pick = int(rng.choice(pool, p=p))
            chosen.append(pick)
            pool.remove(pick)
    return [ranked[i] for i in sorted(chosen)]


# ---------------------------------------------------------------------------
# Candidate pairs and generations
# ---------------------------------------------------------------------------


@dataclass
class CandidatePair:
    pair_id: str
    hrf: Candidate | None
    oef: Candidate | None
    generation: int
    fallback: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        def part(c: Candidate | None) -> dict | None:
            if c is None:
                return None
            d = c.to_record()
            d["extra_len"] = c.extra_len
            return d

        return {
            "pair_id": self.pair_id,
            "generation": self.generation,
            "hrf": part(self.hrf),
            "oef": part(self.oef),
            "fallback": list(self.fallback),
        }

    @classmethod
    def from_dict(cls, d: dict, config: pe.ScenarioConfig, history_depth: int = 1) -> "CandidatePair":
        def part(rec: dict | None, kind: Kind) -> Candidate | None:
            if rec is None:
                return None
            cand = parse_candidate(rec["source"], kind, id=rec["id"], lineage=rec.get("lineage", ()),
                                   generation_index=rec.get("generation", 0))
            return validate(cand, config, history_depth=history_depth)

        return cls(d["pair_id"], part(d["hrf"], Kind.HRF), part(d["oef"], Kind.OEF), d["generation"], list(d["fallback"]))


@dataclass
class Generation:
    index: int
    candidates: list[CandidatePair]
    reports: list[EvalReport] = field(default_factory=list)
    carried: list[str] = field(default_factory=list)
    elites: list[dict] = field(default_factory=list)
    feedback_prompts: dict[str, str] = field(default_factory=dict)
    requests: list[dict] = field(default_factory=list)
    invalid: list[dict] = field(default_factory=list)

    @property
    def best_elite_coverage(self) -> float:
        return max((e["coverage_rate"] for e in self.elites), default=0.0)

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "candidates": [p.to_dict() for p in self.candidates],
            "reports": [dict(r.metrics(), curve=r.curve) for r in self.reports],
            "carried": list(self.carried),
            "elites": self.elites,
            "feedback_prompts": self.feedback_prompts,
            "requests": self.requests,
            "invalid": self.invalid,
        }

    @classmethod
    def from_dict(cls, d: dict, config: pe.ScenarioConfig, history_depth: int = 1) -> "Generation":
        return cls(
            d["index"],
            [CandidatePair.from_dict(p, config, history_depth) for p in d["candidates"]],
            [EvalReport.from_dict(r) for r in d["reports"]],
            list(d["carried"]),
            list(d["elites"]),
            dict(d["feedback_prompts"]),
            list(d["requests"]),
            list(d.get("invalid", [])),
        )

    def save(self, directory: str | Path) -> Path:
        path = Path(directory) / f"{self.index:03d}.json"
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path


@dataclass
class EvolutionConfig:
    scenario: pe.ScenarioConfig
    trainer: TrainerSpec = field(default_factory=TrainerSpec)
    rounds: int = 4
    per_round: int = 3
    population_size: int = 2
    selector: SelectorStrategy = field(default_factory=SelectorStrategy)
    evolve_hrf: bool = True
    evolve_oef: bool = True
    alpha: float = 0.5
    seed: int = 0
    retries: int = 2
    workers: int = 1
    fitness_seeds: int = 1
    temperature: float = 1.0
    model_name: str = "o3-mini"

    def __post_init__(self) -> None:
        if self.rounds < 1 or self.per_round < 1 or self.population_size < 1:
            raise ValueError("rounds, per_round and population_size must be positive")
        if not (self.evolve_hrf or self.evolve_oef):
            raise ValueError("at least one of the reward and the observation function must be generated")

    @property
    def kinds(self) -> list[Kind]:
        return [k for k, on in ((Kind.HRF, self.evolve_hrf), (Kind.OEF, self.evolve_oef)) if on]


# ---------------------------------------------------------------------------
# Generation of candidates
# ---------------------------------------------------------------------------


def _candidate_from_completion(
    text: str, kind: Kind, cid: str, lineage: tuple[str, ...], g: int, config: EvolutionConfig
) -> Candidate:
    try:
        source = extract_code(text)
    except NoCodeBlock:
        cand = parse_candidate("", kind, id=cid, lineage=lineage, generation_index=g)
        return replace(cand, status=Status.INVALID, reason="no code block")
    cand = parse_candidate(source, kind, id=cid, lineage=lineage, generation_index=g)
    return validate(cand, config.scenario, history_depth=config.trainer.history_depth)


def generate_kind(
    g: int,
    kind: Kind,
    prompt: tuple[str, str],
    llm: Provider,
    config: EvolutionConfig,
    lineage: tuple[str, ...],
    log_requests: list[dict],
    log_invalid: list[dict],
) -> tuple[list[Candidate], list[bool]]:
    """``per_round`` validated candidates of one kind plus per-slot fallback flags.

    A slot whose candidate is invalid is re-requested (same prompt, one
    completion) up to ``retries`` times, then filled with the builtin.
    """
    system, user = prompt

    def ask(n: int, rid: str) -> list[str]:
        req = LlmRequest(system, user, n, config.temperature, config.model_name, rid)
        log_requests.append({"request_id": rid, "fingerprint": req.fingerprint, "n": n})
        return llm.generate(req).completions

    tag = kind.value
    completions = ask(config.per_round, f"g{g}-{tag}-0")
    out: list[Candidate] = []
    flags: list[bool] = []
    for slot, text in enumerate(completions):
        cid = f"g{g}-{tag}{slot}"
        cand = _candidate_from_completion(text, kind, cid, lineage, g, config)
        attempt = 0
        while not cand.valid and attempt < config.retries:
            log_invalid.append({"id": cid, "attempt": attempt, "reason": cand.reason, "probe": cand.failed_probe})
            attempt += 1
            text = ask(1, f"g{g}-{tag}-s{slot}r{attempt}")[0]
            cand = _candidate_from_completion(text, kind, cid, lineage, g, config)
        if cand.valid:
            out.append(cand)
            flags.append(False)
        else:
            log_invalid.append({"id": cid, "attempt": attempt, "reason": cand.reason, "probe": cand.failed_probe})
            fb = builtin_candidate(FALLBACK[kind], config.scenario)
            out.append(replace(fb, id=f"{cid}:fallback:{FALLBACK[kind]}", generation_index=g, lineage=lineage))
            flags.append(True)
    return out, flags


def build_prompts(
    config: EvolutionConfig, eval_results: dict[Kind, str] | None
) -> dict[Kind, tuple[str, str]]:
    prompts = {}
    for kind in config.kinds:
        bindings = scenario_bindings(config.scenario, kind)
        if eval_results is not None:
            bindings["eval_result"] = eval_results[kind]
        system, user = PromptTemplate.load(kind).render(bindings, with_feedback=eval_results is not None)
        leftover = unresolved(system + user)
        if leftover:
            raise UnboundPlaceholder(leftover[0])
        prompts[kind] = (system, user)
    return prompts


def seed_generation(config: EvolutionConfig, llm: Provider) -> Generation:
    """Round 0: candidates from the task prompt alone, no feedback."""
    return _generate_with_prompts(0, config, llm, build_prompts(config, None), ())


# ---------------------------------------------------------------------------
# Fitness
# ---------------------------------------------------------------------------


def _train_pair(
    scenario: pe.ScenarioConfig,
    pair_id: str,
    hrf_source: tuple[str, str] | None,
    oef_source: tuple[str, str] | None,
    alpha: float,
    spec: TrainerSpec,
) -> EvalReport:
    """Worker entry point: candidates travel as (id, source) and are rebuilt here."""

    def rebuild(src: tuple[str, str] | None, kind: Kind) -> Candidate | None:
        if src is None:
            return None
        cand = validate(parse_candidate(src[1], kind, id=src[0]), scenario, history_depth=spec.history_depth)
        if not cand.valid:
            raise RuntimeError(f"candidate {src[0]} no longer validates: {cand.reason}")
        return cand

    hrf = rebuild(hrf_source, Kind.HRF)
    oef = rebuild(oef_source, Kind.OEF)
    hybrid = HybridRewardSpec.from_candidate(hrf, alpha, scenario.n_agents) if hrf is not None else None
    return train(scenario, hybrid, oef, spec, pair_id=pair_id)


def average_reports(reports: Sequence[EvalReport]) -> EvalReport:
    """Mean metrics over seeds; any failure fails the whole pair."""
    first = reports[0]
    failed = [r for r in reports if not r.ok]
    if failed:
        return failed[0]
    if len(reports) == 1:
        return first
    out = replace(first)
    out.coverage_rate = float(np.mean([r.coverage_rate for r in reports]))
    out.final_step_coverage = float(np.mean([r.final_step_coverage for r in reports]))
    out.cumulative_native_reward = float(np.mean([r.cumulative_native_reward for r in reports]))
    out.convergence_stat = int(round(np.mean([r.convergence_stat for r in reports])))
    out.wall_time = float(sum(r.wall_time for r in reports))
    return out


def evaluate_pairs(pairs: Sequence[CandidatePair], config: EvolutionConfig, g: int) -> list[EvalReport]:
    jobs = []
    for pair in pairs:
        for s in range(config.fitness_seeds):
            spec = replace(config.trainer, seed=config.seed * 1_000 + g * 10 + s)
            jobs.append(
                (
                    config.scenario,
                    pair.pair_id,
                    (pair.hrf.id, pair.hrf.source) if pair.hrf is not None else None,
                    (pair.oef.id, pair.oef.source) if pair.oef is not None else None,
                    config.alpha,
                    spec,
                )
            )
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_train_pair, *zip(*jobs)))
    else:
        results = [_train_pair(*job) for job in jobs]
    by_pair: dict[str, list[EvalReport]] = {}
    for r in results:
        by_pair.setdefault(r.pair_id, []).append(r)
    return [average_reports(by_pair[p.pair_id]) for p in pairs]


# ---------------------------------------------------------------------------
# Feedback
# ---------------------------------------------------------------------------


def _num(x: float) -> str:
    return f"{x:.4g}"


def eval_result_block(elites: Sequence[EvalReport], pairs: dict[str, CandidatePair], kind: Kind) -> str:
    lines = []
    for rank, rep in enumerate(elites, 1):
        pair = pairs[rep.pair_id]
        cand = pair.hrf if kind is Kind.HRF else pair.oef
        lines.append(f"elite {rank} ({rep.pair_id})")
        lines.append(f"coverage_rate: {_num(rep.coverage_rate)}")
        lines.append(f"final_step_coverage: {_num(rep.final_step_coverage)}")
        lines.append(f"cumulative_reward: {_num(rep.cumulative_native_reward)}")
        lines.append(f"convergence_steps: {rep.convergence_stat}")
        if not rep.ok:
            lines.append(f"status: failed ({rep.reason})")
        if cand is None:
            lines.append("source: native (not generated)")
        else:
            lines.append("source:")
            lines.append("```")
            lines.append(cand.source.rstrip("\n"))
            lines.append("```")
        lines.append("")
    return "\n".join(lines).rstrip("\n")


def assemble_feedback(
    elites: Sequence[EvalReport],
    pairs: dict[str, CandidatePair],
    config: EvolutionConfig,
) -> dict[str, str]:
    """Next-round user prompts (feedback sections bound) keyed by kind."""
    if not elites:
        raise ValueError("feedback needs at least one elite")
    results = {kind: eval_result_block(elites, pairs, kind) for kind in config.kinds}
    prompts = build_prompts(config, results)
    return {kind.value: prompts[kind][1] for kind in config.kinds}


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------


def _skip(llm: Provider, requests: Sequence[dict]) -> None:
    """Advance a deterministic provider past requests served before a resume."""
    inner = llm.inner if isinstance(llm, RecordingProvider) else llm
    skip = getattr(inner, "skip", None)
    if skip is None:
        return
    for r in requests:
        skip(r["fingerprint"], r["request_id"])


def run_evolution(
    config: EvolutionConfig,
    llm: Provider,
    out_dir: str | Path,
    *,
    resume: bool = True,
    on_round_end: Callable[[Generation], None] | None = None,
) -> list[Generation]:
    out = Path(out_dir)
    gen_dir = out / "generations"
    gen_dir.mkdir(parents=True, exist_ok=True)

    history: list[Generation] = []
    if resume:
        for g in range(config.rounds):
            path = gen_dir / f"{g:03d}.json"
            if not path.exists():
                break
            history.append(Generation.from_dict(json.loads(path.read_text()), config.scenario, config.trainer.history_depth))
        for gen in history:
            _skip(llm, gen.requests)
    if not resume or not history:
        for stale in gen_dir.glob("*.json"):
            stale.unlink()

    pairs: dict[str, CandidatePair] = {}
    reports: dict[str, EvalReport] = {}
    for gen in history:
        pairs.update({p.pair_id: p for p in gen.candidates})
        reports.update({r.pair_id: r for r in gen.reports})

    for g in range(len(history), config.rounds):
        prev = history[-1] if history else None
        if prev is None:
            gen = seed_generation(config, llm)
        else:
            prompts = build_prompts_from_feedback(config, prev)
            gen = _generate_with_prompts(g, config, llm, prompts, tuple(e["pair_id"] for e in prev.elites))
        new_reports = evaluate_pairs(gen.candidates, config, g)
        gen.reports = new_reports
        pairs.update({p.pair_id: p for p in gen.candidates})
        reports.update({r.pair_id: r for r in new_reports})

        gen.carried = [e["pair_id"] for e in prev.elites] if prev else []
        pool = new_reports + [reports[pid] for pid in gen.carried]
        ranked = score(pool)
        # per-round generator so a resumed run draws exactly what it would have
        sel_rng = np.random.default_rng([config.selector.seed, config.seed, g])
        chosen = select(ranked, config.selector, config.population_size, sel_rng)
        if ranked[0].pair_id not in {r.pair_id for r in chosen}:
            # elitism: the best pair seen so far always survives
            chosen = [ranked[0]] + chosen[: max(config.population_size - 1, 0)]
        chosen = score(chosen)
        gen.elites = [
            {
                "pair_id": r.pair_id,
                "generation": pairs[r.pair_id].generation,
                "coverage_rate": r.coverage_rate,
                "cumulative_native_reward": r.cumulative_native_reward,
                "convergence_stat": r.convergence_stat,
                "status": r.status,
            }
            for r in chosen
        ]
        gen.feedback_prompts = assemble_feedback(chosen, pairs, config) if g + 1 < config.rounds else {}
        gen.save(gen_dir)
        write_timing(out, gen)
        history.append(gen)
        log.info("round %d: best elite coverage %.4f", g, gen.best_elite_coverage)
        if on_round_end is not None:
            on_round_end(gen)
    return history


def build_prompts_from_feedback(config: EvolutionConfig, prev: Generation) -> dict[Kind, tuple[str, str]]:
    """System prompts are fixed; user prompts come from the previous round's feedback."""
    base = build_prompts(config, None)
    return {kind: (base[kind][0], prev.feedback_prompts[kind.value]) for kind in config.kinds}


def _generate_with_prompts(
    g: int, config: EvolutionConfig, llm: Provider, prompts: dict[Kind, tuple[str, str]], lineage: tuple[str, ...]
) -> Generation:
    requests: list[dict] = []
    invalid: list[dict] = []
    made = {kind: generate_kind(g, kind, prompts[kind], llm, config, lineage, requests, invalid) for kind in config.kinds}
    pairs = []
    for i in range(config.per_round):
        hrf = made[Kind.HRF][0][i] if Kind.HRF in made else None
        oef = made[Kind.OEF][0][i] if Kind.OEF in made else None
        fallback = [k.value for k in made if made[k][1][i]]
        pairs.append(CandidatePair(f"g{g}p{i}", hrf, oef, g, fallback))
    return Generation(g, pairs, requests=requests, invalid=invalid)


def write_timing(out: Path, gen: Generation) -> None:
    with open(out / "timing.jsonl", "a") as fh:
        for r in gen.reports:
            fh.write(json.dumps({"generation": gen.index, "pair_id": r.pair_id, "wall_time": r.wall_time}) + "\n")


def curve_records(history: Sequence[Generation]) -> list[dict]:
    rows = []
    for gen in history:
        for r in gen.reports:
            for point in r.curve:
                rows.append({"generation": gen.index, "pair_id": r.pair_id, **point})
    return rows
