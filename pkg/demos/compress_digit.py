"""Compile one rendered digit into a shallow circuit and compare gate sets.

Run with ``python3 demos/compress_digit.py``.
"""

import numpy as np

from qpix import circuit as cq
from qpix import datasets, mps, optimizer

imgs, labels = datasets.synthetic_digits(1, seed=0, side=16)
target = mps.mps_from_image(imgs[0])
print(f"digit {labels[0]}: {len(target)} qubits, bond dimensions {target.bonds}")

# one growth pass per gate set; infidelity after every added layer
for gate_set in cq.GATE_SETS:
    row = []
    for c, rep in optimizer.grow_stages(target, gate_set, 4):
        row.append(f"{rep.cnot_count:4d} CNOTs {rep.final_infidelity:.4f}")
    print(f"{gate_set:>6}: " + " | ".join(row))

# full pipeline with BFGS refinement on the rotation angles
c, dc, rep = optimizer.compile_state(target, "so4", 3)
print(f"so4 d=3 after sweeps {rep.sweep_infidelity:.4f}, after BFGS {rep.final_infidelity:.4f}")
print(f"{rep.cnot_count} CNOTs, CNOT depth {dc.cnot_depth()}, "
      f"{dc.parameters().size} rotation angles")

# simulate the exported gate list directly
psi = cq.apply_dense(dc)
print(f"fidelity of the refined gate list: {abs(np.vdot(target.to_dense(), psi)) ** 2:.6f}")
