"""
The transfer experiment matrix
==============================

Each plant takes the target role once. In ``one_to_one`` the source is a
single other plant, in ``rest_to_one`` it is every other plant pooled. The
per-target reports are written the same way the command line tool writes
them, with an Average row.
"""
import sys
from pathlib import Path

from dannr.data import FleetSpec, generate_fleet
from dannr.evaluation import average_row, run_experiment_matrix, write_reports_csv
from dannr.train import TrainConfig

out = Path(sys.argv[1] if len(sys.argv) > 1 else "matrix_out")
out.mkdir(exist_ok=True)

fleet = generate_fleet(FleetSpec(seed=1, n_samples=1000))
cfg = TrainConfig(seed=1, epochs=60)

for mode in ("one_to_one", "rest_to_one"):
    reports = run_experiment_matrix(fleet, mode, cfg, probe=False)
    print(f"\n{mode}")
    print(f"{'target':9s} {'source':34s} {'tgt no TL':>10s} {'tgt TL':>10s} {'ratio':>6s}")
    for r in reports:
        print(f"{r.target_name:9s} {r.source_name:34s} {r.target_mse_no_tl:10.5f} {r.target_mse_tl:10.5f} "
              f"{r.transfer_ratio:6.2f}")
    print(f"average transfer ratio {average_row(reports)['transfer_ratio']:.2f}")
    write_reports_csv(reports, out / f"{mode}.csv")

print("\nreports written to", out.resolve())
