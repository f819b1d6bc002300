"""Warm-started MPS classifier on rendered zeros and ones.

Run with ``python3 demos/train_classifier.py``.
"""

import numpy as np

from qpix import classify, datasets, mps

imgs, labels = datasets.synthetic_digits(300, seed=1, digits=(0, 1), side=16)
states = [mps.mps_from_image(im) for im in imgs]
tr, va = slice(0, 200), slice(200, 300)

cfg = classify.TrainConfig(epochs=5, batch_size=50, seed=1)
for init in ("warm", "random"):
    if init == "warm":
        model = classify.init_warmstart("mps", states[tr], labels[tr], chi=8)
    else:
        model = classify.init_random("mps", len(states[0]), 8, seed=1)
    _, hist = classify.fit(model, states[tr], labels[tr], states[va], labels[va], cfg)
    print(init, " ".join(f"{h['valAcc']:.3f}" for h in hist))

k = classify.kernel_gram(states[:6])
print("fidelity kernel, first rows:")
print(np.round(k[:3], 3))
