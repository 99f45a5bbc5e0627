"""
One source plant, one target plant
==================================

Generate a synthetic fleet whose plants disagree mainly through sensor
calibration, train a source-only baseline and a DANN-R model on the same
initialization, then compare both on the unlabeled target plant.
"""
from dannr.data import FleetSpec, apply_normalizer, fit_normalizer, generate_fleet
from dannr.evaluation import mse, probe_domain_accuracy, transfer_ratio
from dannr.model import init_model
from dannr.train import TrainConfig, train_baseline, train_dannr

fleet = generate_fleet(FleetSpec(seed=0))
print("plants:", [ds.origin for ds in fleet], "rows each:", len(fleet[0]))

# scaling is fitted on the source only; the target reuses it
stats = fit_normalizer(fleet[0])
source = apply_normalizer(stats, fleet[0])
target = apply_normalizer(stats, fleet[1])
print("mean humidity, source vs target:", source.X[:, 1].mean().round(3), target.X[:, 1].mean().round(3))

cfg = TrainConfig(seed=0, epochs=100)
init = init_model(4, hidden=(60,), seed=0)
base, base_trace = train_baseline(init, source, cfg)
# the adversarial run only ever sees target inputs
adapted, trace = train_dannr(init, source, target.without_labels(), cfg)

for r in trace.records[::20]:
    print(f"epoch {r.epoch:3d}  lambda {r.lam:.2f}  source L_r {r.source_regression_loss:.5f}  L_d {r.domain_loss:.4f}")

no_tl = mse(base.predict(target.X), target.y)
tl = mse(adapted.predict(target.X), target.y)
print(f"target MSE without TL {no_tl:.5f}, with TL {tl:.5f}, transfer ratio {transfer_ratio(no_tl, tl):.2f}")
print(f"source MSE without TL {mse(base.predict(source.X), source.y):.5f}, "
      f"with TL {mse(adapted.predict(source.X), source.y):.5f}")

# how separable the two plants remain in each model's feature space
print("domain probe accuracy, baseline features:", round(probe_domain_accuracy(base, source, target), 3))
print("domain probe accuracy, DANN-R features:  ", round(probe_domain_accuracy(adapted, source, target), 3))
