"""Train the class models and locate a breakage.

Simulates a small training campaign in dry soil, fits one PCA model per
class, then runs the three detection phases on a fresh noisy measurement of
a section whose track-2 inner rail is broken close to the receiver.
"""

import math

from railbreak.detector import detect
from railbreak.harness.bundle import train_bundle
from railbreak.harness.dataset import simulate_training
from railbreak.harness.suite import ScenarioSuite, Simulator
from railbreak.netmodel import BreakageSpec

# a short code keeps the demo fast; the default degree is 14
sim = Simulator("dry", kasami_degree=8)
suite = ScenarioSuite(trials_per_snr=20, kasami_degree=8, seed_base=0)
rows = simulate_training(suite, {"dry": sim})
bundle = train_bundle(rows, meta=sim.describe())
print(f"trained {sum(len(p) for p in bundle.phases.values())} class models from {len(rows)} rows")

# a case seed far from the training seeds
breakage = frozenset({BreakageSpec.from_label("R2i3/4")})
for snr in (math.inf, 0.0):
    report = detect(bundle, sim.measure_case(breakage, snr, case_seed=10**9))
    print(f"\n== SNR {snr} dB")
    print(report.render_text())
