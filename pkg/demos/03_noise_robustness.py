"""Label-noise sweep: plain cross-entropy vs the full objective.

Flips 10/20/30% of training labels uniformly to other classes, trains
both objectives on identical data with paired seeds, and reports the
final overall test accuracy (mean and standard deviation across seeds).
At the default settings expect the gap to widen with the noise rate.

Takes a few minutes (18 full training runs).

Run:  python demos/03_noise_robustness.py
"""

import numpy as np

from nla import TrainConfig, inject_noise, run_training, standard_instance
from nla.numkit import Rng, derive_seed

MASTER = 7
SEEDS = (1, 2, 3)
RATES = (0.1, 0.2, 0.3)

base_train, test = standard_instance(MASTER)
print(f"standard instance: {base_train.n} train / {test.n} test samples, "
      f"{base_train.n_classes} classes\n")

print("noise   ce accuracy        nla accuracy       gap")
print("-----   ---------------    ---------------    ------")
for rate in RATES:
    finals = {"ce": [], "nla": []}
    for seed in SEEDS:
        noisy = inject_noise(base_train, rate,
                             Rng(derive_seed(MASTER, f"demo-noise|{rate}|{seed}")))
        run_seed = derive_seed(MASTER, f"demo-run|{rate}|{seed}")
        for mode in finals:
            record = run_training(TrainConfig(mode=mode, epochs=60, seed=run_seed),
                                  noisy, test)
            finals[mode].append(record.metrics[-1].test_overall)
    ce = np.array(finals["ce"])
    nla = np.array(finals["nla"])
    print(f"{rate:>4.0%}   {ce.mean():.4f} +/- {ce.std(ddof=1):.4f}   "
          f"{nla.mean():.4f} +/- {nla.std(ddof=1):.4f}   "
          f"{100 * (nla.mean() - ce.mean()):+.2f} pts")

print("\nEach row compares the two objectives on byte-identical noisy data "
      "with identical initializations; only the loss differs.")
