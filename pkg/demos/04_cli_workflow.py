"""
Driving the command line tool
=============================

The same pipeline through the ``dannr`` entry point: generate a fleet, train
both models, evaluate, then run a small resumable benchmark. Every step
writes a ``resolved_config.json`` next to its outputs.
"""
import json
import sys
import tempfile
from pathlib import Path

from dannr.cli import main

work = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="dannr-"))
work.mkdir(parents=True, exist_ok=True)


def config(name, doc):
    path = work / name
    path.write_text(json.dumps(doc, indent=2))
    return str(path)


def run(*argv):
    print("$ dannr", " ".join(argv))
    code = main(list(argv))
    print("  exit", code)
    return code


run("generate", "--config", config("gen.json", {"fleet": {"n_samples": 800, "seed": 2}}),
    "--out", str(work / "fleet"))

train_doc = {"source": str(work / "fleet/plant-0.csv"), "target": str(work / "fleet/plant-1.csv"),
             "train": {"epochs": 60}}
run("train", "--mode", "baseline", "--config", config("train.json", train_doc), "--out", str(work / "baseline"))
run("train", "--mode", "dannr", "--config", str(work / "train.json"), "--out", str(work / "dannr"))

eval_doc = {"source": train_doc["source"], "target": train_doc["target"],
            "checkpoints": {"baseline": str(work / "baseline/checkpoint.json"),
                            "dannr": str(work / "dannr/checkpoint.json")}}
run("eval", "--config", config("eval.json", eval_doc), "--out", str(work / "eval"))
print((work / "eval/report.csv").read_text())

bench_doc = {"fleet": {"n_samples": 300, "seed": 2}, "train": {"epochs": 20}, "seeds": [0, 1]}
run("bench", "--config", config("bench.json", bench_doc), "--jobs", "2", "--out", str(work / "bench"))
# a second invocation finds every cell on disk and only rebuilds the summaries
run("bench", "--config", str(work / "bench.json"), "--out", str(work / "bench"))
print((work / "bench/aggregate.csv").read_text())
print("artifacts in", work)
