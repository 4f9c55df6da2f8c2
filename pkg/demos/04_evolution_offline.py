"""
An offline evolution run
========================

Runs the full generate, train, select and feedback loop without a network:
a scripted provider answers each round with canned candidates. The run
directory then holds everything a replay needs, and the last step replays
it and checks the artifacts match byte for byte.
"""

from __future__ import annotations

import argparse
import tempfile
from pathlib import Path

from lero.candidates.engine import builtin_source
from lero.cli import main as cli
from lero.experiment import resolve_config, run
from lero.llm import ScriptedProvider


def fenced(name: str) -> str:
    return f"Here is a candidate.\n```\n{builtin_source(name)}```\n"


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--steps", type=int, default=1_000)
    parser.add_argument("--out", type=Path, default=None)
    args = parser.parse_args()
    out = args.out or Path(tempfile.mkdtemp(prefix="lero-demo-"))

    script = {
        "hrf": [[fenced("reward_v0"), fenced("reward_evo"), fenced("reward_v0")]] * 3,
        "oef": [[fenced("oef_v0"), fenced("oef_v0"), fenced("oef_evo")]] * 3,
    }
    config = resolve_config({
        "mode": "lero",
        "scenario": "spread",
        "n_agents": 2,
        "n_landmarks": 2,
        "rounds": 3,
        "total_env_steps": args.steps,
        "out_dir": str(out),
    })
    result = run(config, ScriptedProvider(script))
    print(f"run finished with status {result.status}, best coverage {result.coverage_rate:.4f}")
    for path in sorted((result.run_dir / "generations").glob("*.json")):
        print("  wrote", path.relative_to(out))

    # the recorded exchange replays the whole run offline
    cli(["report", str(out)])
    cli(["replay-check", str(result.run_dir)])


if __name__ == "__main__":
    main()
