"""How many principal components each class keeps.

Fits the joint-injection classes of phases 2 and 3 on a small campaign and prints the
residual variance fraction for every order, then the order picked by the
variance cap, and the T² control limit that goes with it.
"""

from railbreak.harness.bundle import training_sets
from railbreak.harness.dataset import simulate_training
from railbreak.harness.suite import ScenarioSuite, Simulator
from railbreak.pca import RMSE_CAP, rmse_curve, select_order, t2_threshold, train

sim = Simulator("dry", kasami_degree=8)
suite = ScenarioSuite(trials_per_snr=20, kasami_degree=8, seed_base=0)
rows = simulate_training(suite, {"dry": sim})

print(f"variance cap {RMSE_CAP}")
for phase in (2, 3):
    for name, data in training_sets(rows, phase).items():
        model = train(data)
        curve = rmse_curve(model.eigenvalues)
        m, flagged = select_order(model.eigenvalues)
        limit = t2_threshold(model.training_K, m)
        shown = " ".join(f"{v:.4f}" for v in curve[1:])
        print(f"{name:<8} K={model.training_K}  RMSE(1..n)= {shown}  m={m}"
              f"{' (flagged)' if flagged else ''}  T2 limit={limit:.3f}")
