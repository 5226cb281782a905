"""The whole pipeline through the CLI, exactly as an operator would run it.

Creates a temp workspace, generates the bundled fixture, and walks:
init -> split -> prompt build -> score (mock) -> evaluate -> report,
then builds few-shot variants so the final report compares implementations.

Run: python3 demos/05_full_pipeline_cli.py
"""

import json
import subprocess
import sys
import tempfile
from pathlib import Path

workspace = Path(tempfile.mkdtemp(prefix="rubric-loop-demo-"))
home = workspace / "experiments"
env = {"RUBRIC_LOOP_HOME": str(home), "PATH": "/usr/bin:/bin"}


def cli(*argv: str) -> str:
    command = [sys.executable, "-m", "rubric_loop.cli", *argv]
    print(f"$ rubric-loop {' '.join(argv)}")
    result = subprocess.run(command, capture_output=True, text=True, env=env)
    sys.stdout.write(result.stdout)
    if result.returncode != 0:
        sys.stderr.write(result.stderr)
        raise SystemExit(result.returncode)
    return result.stdout


cli("fixture", "--out", str(workspace / "data"))
cli(
    "init", "-e", "demo",
    "--dataset", str(workspace / "data" / "dataset.jsonl"),
    "--rubric", str(workspace / "data" / "rubric.yaml"),
)
cli("split", "-e", "demo", "--seed", "42")

print("\n-- zero-shot baseline ----------------------------------------------")
out = cli("prompt", "build", "-e", "demo", "--mode", "zero_shot")
zero_digest = out.split()[1].rstrip(":")
out = cli("score", "-e", "demo", "--prompt", zero_digest, "--partition", "test")
cli("evaluate", "-e", "demo", "--run", out.split()[1].rstrip(":"))

print("\n-- few-shot with a balanced exemplar file ---------------------------")
# Exemplars come from gold labels here; in live use they come from the
# reliability workflow (irr compute/consensus/exemplars).
from rubric_loop.fixtures import balanced_exemplar_ids, exemplars_from_gold, fixture_dataset

dataset = fixture_dataset()
exemplars = exemplars_from_gold(dataset, balanced_exemplar_ids(dataset))
exemplar_file = workspace / "exemplars.json"
exemplar_file.write_text(json.dumps([e.to_dict() for e in exemplars]))

for mode in ("few_shot", "few_shot_cot"):
    out = cli(
        "prompt", "build", "-e", "demo", "--mode", mode,
        "--exemplars", f"file:{exemplar_file}",
    )
    digest = out.split()[1].rstrip(":")
    out = cli("score", "-e", "demo", "--prompt", digest, "--partition", "test")
    cli("evaluate", "-e", "demo", "--run", out.split()[1].rstrip(":"))

print("\n-- comparison report -------------------------------------------------")
cli("report", "-e", "demo", "--csv", str(workspace / "report.csv"))
print(f"\nArtifacts left in {workspace}")
