"""Regenerate golden.json with plain-Python arithmetic (no numpy, no evoattack).

Run from this directory: ``python make_golden.py``.
"""

import json
import math
import random

rng = random.Random(20240601)
H, W, C = 2, 2, 3
HIDDEN, CLASSES = 5, 3
n_in = H * W * C


def mat(rows, cols):
    return [[round(rng.gauss(0, 0.5), 6) for _ in range(cols)] for _ in range(rows)]


W1, b1 = mat(HIDDEN, n_in), [round(rng.gauss(0, 0.1), 6) for _ in range(HIDDEN)]
W2, b2 = mat(CLASSES, HIDDEN), [round(rng.gauss(0, 0.1), 6) for _ in range(CLASSES)]
model = {
    "input_shape": [H, W, C],
    "layers": [
        {"type": "dense", "in": n_in, "out": HIDDEN, "weights": [v for r in W1 for v in r], "bias": b1},
        {"type": "relu"},
        {"type": "dense", "in": HIDDEN, "out": CLASSES, "weights": [v for r in W2 for v in r], "bias": b2},
        {"type": "softmax"},
    ],
}

image = [round(rng.random(), 4) for _ in range(n_in)]  # row-major, channel-last


def forward(x):
    h = [max(0.0, sum(W1[o][i] * x[i] for i in range(n_in)) + b1[o]) for o in range(HIDDEN)]
    z = [sum(W2[o][i] * h[i] for i in range(HIDDEN)) + b2[o] for o in range(CLASSES)]
    top = max(z)
    e = [math.exp(v - top) for v in z]
    return [v / sum(e) for v in e]


probs = forward(image)

# evaluate_genome through clamp -> upsample (s=2) -> add -> clip -> forward
eps, scale = 0.05, 2
genome = [[[0.2, -0.01, 0.03]]]  # 1x1x3 genome
clamped = [min(max(v, -eps), eps) for v in genome[0][0]]
perturbed = []
for row in range(H):
    for col in range(W):
        for ch in range(C):
            g = clamped[ch]  # every output pixel maps to genome pixel (row // 2, col // 2) = (0, 0)
            perturbed.append(min(max(image[(row * W + col) * C + ch] + g, 0.0), 1.0))
p2 = forward(perturbed)
true_class = max(range(CLASSES), key=lambda k: (probs[k], -k))

json.dump(
    {
        "model": model,
        "image": image,
        "probs": probs,
        "pipeline": {
            "genome": genome,
            "epsilon": eps,
            "scale": scale,
            "true_class": true_class,
            "perturbed": perturbed,
            "probs": p2,
            "fitness_untargeted": -math.log(max(p2[true_class], 1e-12)),
            "fitness_targeted_class0": math.log(max(p2[0], 1e-12)),
        },
    },
    open("golden.json", "w"),
    indent=1,
)
print("probs", probs, "true", true_class, "p2", p2)
