"""Maximum-cut entanglement entropy of encoded photos against resolution.

Needs scikit-image for the sample photos. Run with
``python3 demos/entropy_scaling.py``.
"""

from qpix import analysis, datasets

images = datasets.natural_images()[:3]
rows = analysis.experiment_entropy_scaling(images, ["mcrqi", "dmulti", "tmulti"],
                                           ["hierarchical"], [4, 8, 16, 32])
for r in rows:
    print(f"{r['scheme']:>7} {r['resolution']:3d}x{r['resolution']:<3d} "
          f"{r['qubits']:3d} qubits  mean S = {r['mean']:.3f}")

for r in analysis.haar_entropy_scaling([6, 8, 10, 12], samples=20):
    print(f"random real state, {r['qubits']:2d} qubits: half-cut S = {r['mean']:.3f}")
