"""Checked-in LLM recordings used by the evolution and mode-matrix tests.

Running this module rebuilds every file under tests/data from the scripted
candidates in tests/data/candidates. Recordings pin prompt fingerprints,
and prompts embed training metrics, so they must be rebuilt whenever the
trainer, the templates or the builtins change:

    python3 tests/recordings.py
"""

from __future__ import annotations

import json
import shutil
import sys
from pathlib import Path

import yaml

from lero.candidates.engine import builtin_source
from lero.experiment import MODES, SCENARIOS, RunConfig, resolve_config, run
from lero.llm import ScriptedProvider

DATA = Path(__file__).parent / "data"
SCRIPT = DATA / "progressive.yaml"
EVOLUTION_DIR = DATA / "evolution"
MATRIX_DIR = DATA / "matrix"

# 4 rounds x 3 candidates per kind, each round better than the last
ROUNDS = {
    "hrf": [
        ["h_zero", "h_single", "h_near"],
        ["h_single", "h_near", "reward_v0"],
        ["h_near", "reward_v0", "reward_evo"],
        ["reward_v0", "reward_evo", "reward_evo"],
    ],
    "oef": [
        ["o_speed", "o_first", "o_speed"],
        ["o_first", "oef_v0", "o_speed"],
        ["oef_v0", "oef_evo", "o_first"],
        ["oef_evo", "oef_v0", "oef_evo"],
    ],
}

EVOLUTION = {
    "mode": "lero",
    "scenario": "spread",
    "n_agents": 2,
    "n_landmarks": 2,
    "algorithm": "vdn",
    "seed": 0,
    "rounds": 4,
    "per_round": 3,
    "population_size": 2,
    "total_env_steps": 5_000,
    "curve_points": 5,
}

MATRIX = {
    "algorithm": "vdn",
    "seed": 0,
    "rounds": 2,
    "per_round": 3,
    "population_size": 2,
    "total_env_steps": 200,
    "eval_episodes": 5,
    "learning_starts": 50,
    "batch_size": 16,
    "hidden_sizes": [16],
    "curve_points": 2,
    "curve_eval_episodes": 2,
    "workers": 1,
}

ARTIFACTS = ("curves.jsonl", "recording.jsonl", "result.json")


def source(name: str) -> str:
    local = DATA / "candidates" / f"{name}.cscript"
    return local.read_text() if local.exists() else builtin_source(name)


def completion(name: str) -> str:
    return f"Candidate {name}:\n```cscript\n{source(name).rstrip()}\n```\n"


def script() -> dict:
    return {kind: [[completion(n) for n in call] for call in calls] for kind, calls in ROUNDS.items()}


def scripted() -> ScriptedProvider:
    return ScriptedProvider(script())


def evolution_config(out_dir: str | Path, provider: str = "live", **kw) -> RunConfig:
    return resolve_config({**EVOLUTION, "out_dir": str(out_dir), "provider": provider, **kw})


def matrix_config(mode: str, scenario: str, out_dir: str | Path, provider: str = "live") -> RunConfig:
    return resolve_config({**MATRIX, "mode": mode, "scenario": scenario, "out_dir": str(out_dir), "provider": provider})


def matrix_recording(mode: str, scenario: str) -> Path:
    return MATRIX_DIR / f"{mode}_{scenario}.jsonl"


def artifact_names(run_dir: Path) -> list[str]:
    return sorted(str(p.relative_to(run_dir)) for p in run_dir.glob("generations/*.json")) + list(ARTIFACTS)


def build(tmp: Path) -> None:
    SCRIPT.write_text(yaml.safe_dump({"calls": script()}, sort_keys=True, width=1000))

    result = run(evolution_config(tmp / "evo"), scripted())
    assert result.status == 0, result.message
    if EVOLUTION_DIR.exists():
        shutil.rmtree(EVOLUTION_DIR)
    for name in artifact_names(result.run_dir):
        dest = EVOLUTION_DIR / name
        dest.parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(result.run_dir / name, dest)
    print(f"evolution: coverage {result.coverage_rate}")

    MATRIX_DIR.mkdir(parents=True, exist_ok=True)
    for scenario in SCENARIOS:
        for mode in MODES:
            result = run(matrix_config(mode, scenario, tmp / "matrix"), scripted())
            assert result.status == 0, result.message
            shutil.copyfile(result.run_dir / "recording.jsonl", matrix_recording(mode, scenario))
            lines = (result.run_dir / "recording.jsonl").read_text().splitlines()
            print(f"matrix {mode}/{scenario}: {len(lines)} requests, coverage {result.coverage_rate}")


if __name__ == "__main__":
    import tempfile

    with tempfile.TemporaryDirectory() as tmp:
        build(Path(tmp))
    json.dump({"rebuilt": True}, sys.stdout)
    print()
