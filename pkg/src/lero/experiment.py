"""Run configurations, the seven ablation modes, and result tables."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import os
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import yaml

from lero import __version__
from lero import particle_env as pe
from lero.candidates.engine import BUILTIN_NAMES, builtin_path, git_blob_hash
from lero.evolution import (
    CandidatePair,
    EvolutionConfig,
    Generation,
    SelectorStrategy,
    curve_records,
    run_evolution,
    template_names,
    template_text,
    write_timing,
)
from lero.llm import LlmError, Provider, RecordingProvider, make_provider
from lero.marl.train import Algorithm, TrainerSpec, train, write_curve

MODES = ("baseline", "lr", "ler", "lo", "leo", "lro", "lero")
MODE_LABELS = {m: ("Baseline" if m == "baseline" else m.upper()) for m in MODES}
SCENARIOS = ("spread", "reference")
ALGORITHMS = ("mappo", "vdn", "qmix")
ALIASES = {"steps": "total_env_steps", "algo": "algorithm", "out": "out_dir", "population": "population_size"}

EXIT_OK, EXIT_CONFIG, EXIT_PROVIDER, EXIT_TRAINING = 0, 2, 3, 4


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(message)


class UnknownKey(ConfigError):
    def __init__(self, key: str):
        super().__init__(key, f"unknown config key {key!r}")


class TypeMismatch(ConfigError):
    def __init__(self, key: str, expected: str, value: Any):
        super().__init__(key, f"config key {key!r} expects {expected}, got {type(value).__name__} {value!r}")


class MissingRequired(ConfigError):
    def __init__(self, key: str):
        super().__init__(key, f"config key {key!r} is required")


@dataclass
class RunConfig:
    mode: str
    scenario: str = "spread"
    algorithm: str = "vdn"
    seed: int = 0
    alpha: float = 0.5
    provider: str = "live"
    out_dir: str = "runs"
    n_agents: int | None = None
    n_landmarks: int | None = None
    horizon: int = pe.HORIZON
    # evolution
    rounds: int = 4
    per_round: int = 3
    population_size: int = 2
    selector: str = "topk:2"
    retries: int = 2
    workers: int = field(default_factory=lambda: os.cpu_count() or 1)
    fitness_seeds: int = 1
    temperature: float = 1.0
    model: str = "o3-mini"
    # trainer
    total_env_steps: int = 30_000
    eval_episodes: int = 50
    lr: float = 1e-3
    batch_size: int = 64
    gamma: float = 0.95
    buffer_size: int = 50_000
    learning_starts: int = 500
    updates_per_step: int = 4
    target_update_interval: int = 200
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_fraction: float = 0.3
    double_q: bool = True
    clip_ratio: float = 0.2
    gae_lambda: float = 0.95
    ppo_epochs: int = 4
    rollout_steps: int = 500
    entropy_coef: float = 0.01
    hidden_sizes: list[int] = field(default_factory=lambda: [64, 64])
    max_grad_norm: float = 10.0
    history_depth: int = 1
    curve_points: int = 10
    curve_eval_episodes: int = 10

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ConfigError("mode", f"mode must be one of {MODES}, got {self.mode!r}")
        if self.scenario not in SCENARIOS:
            raise ConfigError("scenario", f"scenario must be one of {SCENARIOS}, got {self.scenario!r}")
        if self.algorithm not in ALGORITHMS:
            raise ConfigError("algorithm", f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha", "alpha must lie in [0, 1]")

    @property
    def scenario_config(self) -> pe.ScenarioConfig:
        return pe.ScenarioConfig.make(self.scenario, self.n_agents, self.n_landmarks, self.horizon)

    @property
    def trainer_spec(self) -> TrainerSpec:
        names = {f.name for f in dataclasses.fields(TrainerSpec)}
        kw = {k: v for k, v in dataclasses.asdict(self).items() if k in names}
        kw["algorithm"] = Algorithm(self.algorithm)
        kw["hidden_sizes"] = tuple(self.hidden_sizes)
        return TrainerSpec(**kw)

    @property
    def evolves(self) -> bool:
        return self.mode.startswith("le")

    def evolution_config(self) -> EvolutionConfig:
        return EvolutionConfig(
            scenario=self.scenario_config,
            trainer=self.trainer_spec,
            rounds=self.rounds if self.evolves else 1,
            per_round=self.per_round,
            population_size=self.population_size,
            selector=SelectorStrategy.parse(self.selector, self.seed),
            evolve_hrf="r" in self.mode[1:],
            evolve_oef=self.mode.endswith("o"),
            alpha=self.alpha,
            seed=self.seed,
            retries=self.retries,
            workers=self.workers,
            fitness_seeds=self.fitness_seeds,
            temperature=self.temperature,
            model_name=self.model,
        )

    def run_name(self) -> str:
        return f"{self.mode}_{self.scenario}_{self.algorithm}_s{self.seed}"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _check_type(key: str, value: Any, hint: Any) -> Any:
    origin = typing.get_origin(hint)
    if origin is typing.Union or (origin is not None and type(None) in typing.get_args(hint)):
        args = [a for a in typing.get_args(hint) if a is not type(None)]
        if value is None:
            return None
        return _check_type(key, value, args[0])
    if origin is list:
        if not isinstance(value, (list, tuple)):
            raise TypeMismatch(key, "a list", value)
        (inner,) = typing.get_args(hint)
        return [_check_type(key, v, inner) for v in value]
    if hint is bool:
        if not isinstance(value, bool):
            raise TypeMismatch(key, "a boolean", value)
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise TypeMismatch(key, "an integer", value)
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise TypeMismatch(key, "a number", value)
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise TypeMismatch(key, "a string", value)
        return value
    return value


def resolve_config(data: dict | None, overrides: dict | None = None) -> RunConfig:
    """Merge file values and flag overrides, reject unknown keys, check types."""
    merged: dict[str, Any] = {}
    for source in (data or {}), (overrides or {}):
        for key, value in source.items():
            if value is None and source is overrides:
                continue
            merged[ALIASES.get(key, key)] = value
    hints = typing.get_type_hints(RunConfig)
    for key in merged:
        if key not in hints:
            raise UnknownKey(key)
    if "mode" not in merged:
        raise MissingRequired("mode")
    checked = {k: _check_type(k, v, hints[k]) for k, v in merged.items()}
    checked["mode"] = checked["mode"].lower()
    return RunConfig(**checked)


def load_config(path: str | Path | None, overrides: dict | None = None) -> RunConfig:
    data: dict = {}
    if path is not None:
        loaded = yaml.safe_load(Path(path).read_text())
        if loaded is not None and not isinstance(loaded, dict):
            raise ConfigError("<root>", f"{path}: config must be a mapping")
        data = loaded or {}
    return resolve_config(data, overrides)


def content_hashes() -> dict[str, dict[str, str]]:
    return {
        "templates": {n: git_blob_hash(template_text(n).encode("utf-8")) for n in template_names()},
        "builtins": {n: git_blob_hash(builtin_path(n).read_bytes()) for n in BUILTIN_NAMES},
    }


def write_resolved(config: RunConfig, run_dir: Path) -> None:
    payload = {"config": config.to_dict(), "content_hashes": content_hashes(), "version": __version__}
    (run_dir / "config.resolved.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Running
# ---------------------------------------------------------------------------


@dataclass
class RunResult:
    run_dir: Path
    status: int
    coverage_rate: float | None
    message: str = ""


def _baseline(config: RunConfig, run_dir: Path) -> Generation:
    gen_dir = run_dir / "generations"
    gen_dir.mkdir(parents=True, exist_ok=True)
    report = train(config.scenario_config, None, None, config.trainer_spec, pair_id="native")
    gen = Generation(0, [CandidatePair("native", None, None, 0)], [report])
    gen.elites = [
        {
            "pair_id": report.pair_id,
            "generation": 0,
            "coverage_rate": report.coverage_rate,
            "cumulative_native_reward": report.cumulative_native_reward,
            "convergence_stat": report.convergence_stat,
            "status": report.status,
        }
    ]
    gen.save(gen_dir)
    write_timing(run_dir, gen)
    return gen


def _truncate_recording(path: Path, history_requests: int) -> None:
    """Keep only the log lines of rounds that completed before a crash."""
    if not path.exists():
        path.touch()
        return
    lines = path.read_text(encoding="utf-8").splitlines(keepends=True)
    path.write_text("".join(lines[:history_requests]), encoding="utf-8")


def _completed_requests(run_dir: Path, rounds: int) -> int:
    total = 0
    for g in range(rounds):
        p = run_dir / "generations" / f"{g:03d}.json"
        if not p.exists():
            break
        total += len(json.loads(p.read_text())["requests"])
    return total


def run(config: RunConfig, provider: Provider | None = None, *, resume: bool = True, on_round_end=None) -> RunResult:
    run_dir = Path(config.out_dir) / config.run_name()
    run_dir.mkdir(parents=True, exist_ok=True)
    write_resolved(config, run_dir)
    recording = run_dir / "recording.jsonl"
    timing = run_dir / "timing.jsonl"
    if not resume:
        for stale in (recording, timing):
            stale.unlink(missing_ok=True)
        for stale in (run_dir / "generations").glob("*.json"):
            stale.unlink()

    try:
        if config.mode == "baseline":
            recording.write_text("")
            history = [_baseline(config, run_dir)]
        else:
            evo = config.evolution_config()
            _truncate_recording(recording, _completed_requests(run_dir, evo.rounds) if resume else 0)
            inner = provider if provider is not None else make_provider(config.provider)
            llm = RecordingProvider(inner, recording)
            history = run_evolution(evo, llm, run_dir / "", resume=resume, on_round_end=on_round_end)
    except LlmError as exc:
        return RunResult(run_dir, EXIT_PROVIDER, None, f"provider error: {exc}")

    write_curve(run_dir / "curves.jsonl", curve_records(history))
    final = history[-1]
    best = final.best_elite_coverage
    ok = any(e["status"] == "ok" for e in final.elites)
    row = {
        "mode": config.mode,
        "scenario": config.scenario,
        "algorithm": config.algorithm,
        "seed": config.seed,
        "coverage_rate": best if ok else None,
        "generations": len(history),
    }
    (run_dir / "result.json").write_text(json.dumps(row, indent=2, sort_keys=True) + "\n")
    table = ResultTable.from_rows([row])
    (run_dir / "report.csv").write_text(table.to_csv())
    if not ok:
        return RunResult(run_dir, EXIT_TRAINING, None, "every evaluated pair failed")
    return RunResult(run_dir, EXIT_OK, best)


# ---------------------------------------------------------------------------
# Reporting
# ---------------------------------------------------------------------------


def _pct(x: float) -> str:
    return f"{100.0 * x:.1f}%"


@dataclass
class ResultTable:
    """Rows are modes, columns (scenario, algorithm); cells hold mean coverage and seed count."""

    cells: dict[tuple[str, str, str], list[float]] = field(default_factory=dict)

    @classmethod
    def from_rows(cls, rows: Sequence[dict]) -> "ResultTable":
        table = cls()
        for r in rows:
            if r.get("coverage_rate") is None:
                continue
            table.cells.setdefault((r["mode"], r["scenario"], r["algorithm"]), []).append(float(r["coverage_rate"]))
        return table

    @classmethod
    def from_run_dirs(cls, dirs: Sequence[str | Path]) -> "ResultTable":
        rows = []
        for d in dirs:
            d = Path(d)
            candidates = [d / "result.json"] if (d / "result.json").exists() else sorted(d.glob("*/result.json"))
            rows += [json.loads(p.read_text()) for p in candidates]
        if not rows:
            raise FileNotFoundError("no completed runs (result.json) found")
        return cls.from_rows(rows)

    @staticmethod
    def columns() -> list[tuple[str, str]]:
        return [(s, a) for s in SCENARIOS for a in ALGORITHMS]

    def value(self, mode: str, scenario: str, algorithm: str) -> float | None:
        vals = self.cells.get((mode, scenario, algorithm))
        return sum(vals) / len(vals) if vals else None

    def seeds(self, mode: str, scenario: str, algorithm: str) -> int:
        return len(self.cells.get((mode, scenario, algorithm), []))

    def cell(self, mode: str, scenario: str, algorithm: str) -> str:
        v = self.value(mode, scenario, algorithm)
        return "—" if v is None else _pct(v)

    def to_text(self) -> str:
        cols = self.columns()
        header1 = ["", *[s.capitalize() if a == ALGORITHMS[0] else "" for s, a in cols]]
        header2 = ["Mode", *[a.upper() for _, a in cols]]
        body = [[MODE_LABELS[m], *[self.cell(m, s, a) for s, a in cols]] for m in MODES]
        seeds = [[MODE_LABELS[m], *[str(self.seeds(m, s, a)) for s, a in cols]] for m in MODES]

        def render(rows: list[list[str]]) -> list[str]:
            widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
            return ["  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))) for r in rows]

        lines = ["Coverage rate (mean over seeds)"]
        lines += render([header1, header2, *body])
        lines += ["", "Seeds per cell"]
        lines += render([header1, header2, *seeds])
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["mode", "scenario", "algorithm", "coverage_pct", "n_seeds"])
        for m in MODES:
            for s, a in self.columns():
                v = self.value(m, s, a)
                w.writerow([m, s, a, "" if v is None else f"{100.0 * v:.1f}", self.seeds(m, s, a)])
        return buf.getvalue()

    @staticmethod
    def parse_csv(text: str) -> dict[tuple[str, str, str], float | None]:
        out = {}
        for row in csv.DictReader(io.StringIO(text)):
            pct = row["coverage_pct"]
            out[(row["mode"], row["scenario"], row["algorithm"])] = float(pct) if pct else None
        return out


def report(run_dirs: Sequence[str | Path]) -> ResultTable:
    return ResultTable.from_run_dirs(run_dirs)
