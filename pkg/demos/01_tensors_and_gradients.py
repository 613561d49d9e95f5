"""A walk through the autodiff core: build a graph, differentiate it, optimize.

Run: python demos/01_tensors_and_gradients.py
"""

import numpy as np

from clclsa import numerics as nm

print("== tensors and the computation record ==")
x = nm.constant(np.array([[1.0, 2.0], [3.0, 4.0]]), name="x")
w = nm.parameter(np.array([[0.5, -0.2], [0.1, 0.3]]), name="w")
b = nm.parameter(np.zeros((1, 2)), name="b")
hidden = nm.relu(nm.affine(x, w, b))
probs = nm.softmax_rows(hidden)
loss = nm.neg(nm.mean_all(nm.log(nm.clamp_min(nm.pick_per_row(probs, [0, 1]), 1e-12))))
print(f"forward value (cross-entropy on two rows): {loss.item():.6f}")

print("\n== reverse-mode gradients ==")
grads = nm.gradients(loss, {"w": w, "b": b})
print("d loss / d w =\n", grads["w"])
print("d loss / d b =", grads["b"])

print("\n== spot-check against central finite differences ==")
h = 1e-6
w.data[0, 0] += h
up = nm.neg(nm.mean_all(nm.log(nm.clamp_min(nm.pick_per_row(
    nm.softmax_rows(nm.relu(nm.affine(x, w, b))), [0, 1]), 1e-12)))).item()
w.data[0, 0] -= 2 * h
down = nm.neg(nm.mean_all(nm.log(nm.clamp_min(nm.pick_per_row(
    nm.softmax_rows(nm.relu(nm.affine(x, w, b))), [0, 1]), 1e-12)))).item()
w.data[0, 0] += h
fd = (up - down) / (2 * h)
print(f"analytic {grads['w'][0, 0]:+.8f}  vs  finite difference {fd:+.8f}")

print("\n== Adam on a quadratic bowl ==")
theta = nm.parameter(np.array([[4.0, -3.0]]), name="theta")
state = nm.AdamState()
for step in range(200):
    nm.adam_step({"theta": theta}, {"theta": 2.0 * theta.data}, state, lr=0.1)
    if step % 50 == 49:
        print(f"step {step + 1:3d}: theta = {theta.data.ravel()}, "
              f"f = {float((theta.data ** 2).sum()):.2e}")

print("\n== labeled RNG streams are replayable ==")
a = nm.RngStream(42, "demo/dropout").uniform(1, 4)
b2 = nm.RngStream(42, "demo/dropout").uniform(1, 4)
print("draw 1:", np.round(a, 4))
print("draw 2:", np.round(b2, 4), "(identical - same seed, same label)")
