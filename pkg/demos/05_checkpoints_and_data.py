"""
Checkpoints, CSV files and determinism
======================================

Floats are written with ``repr``, so a checkpoint or dataset read back from
disk is value-identical to what was saved, and a training run repeated with
the same seed, config and data reproduces the checkpoint byte for byte.
"""
import tempfile
from pathlib import Path

import numpy as np

from dannr.data import FleetSpec, apply_normalizer, fit_normalizer, generate_fleet, load_csv, save_csv
from dannr.model import init_model, load_checkpoint, save_checkpoint
from dannr.train import TrainConfig, train_dannr

work = Path(tempfile.mkdtemp(prefix="dannr-io-"))
fleet = generate_fleet(FleetSpec(seed=3, n_samples=400))

save_csv(fleet[0], work / "plant-0.csv")
back = load_csv(work / "plant-0.csv")
print("CSV round-trip exact:", np.array_equal(back.X, fleet[0].X) and np.array_equal(back.y, fleet[0].y))

# a file with a corrupt row: the row is skipped and its line number kept
text = (work / "plant-0.csv").read_text().splitlines()
text[5] = "nan," + text[5].split(",", 1)[1]
(work / "dirty.csv").write_text("\n".join(text) + "\n")
print("rejected lines:", load_csv(work / "dirty.csv").rejected)

stats = fit_normalizer(fleet[0])
source, target = apply_normalizer(stats, fleet[0]), apply_normalizer(stats, fleet[3]).without_labels()
cfg = TrainConfig(seed=3, epochs=10)
for i in range(2):
    model, _ = train_dannr(init_model(4, seed=3), source, target, cfg)
    model.meta["norm_stats"] = stats.to_dict()
    save_checkpoint(model, work / f"run{i}.json")
print("bit-identical reruns:", (work / "run0.json").read_bytes() == (work / "run1.json").read_bytes())

loaded = load_checkpoint(work / "run0.json")
print("checkpoint round-trip exact:",
      all(np.array_equal(v, loaded.parameters()[k]) for k, v in model.parameters().items()))
print("stored training config:", loaded.meta["train_config"])
