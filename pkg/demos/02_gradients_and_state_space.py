"""How the numerical core is verified.

1. Finite differences against reverse-mode gradients for a whole model.
2. The diagonal state-space layer computed two ways: FFT convolution with its
   kernel, and the step-by-step recurrence.

    python demos/02_gradients_and_state_space.py
"""

import numpy as np

from ppgbench.autodiff import Tensor, grad_check, mse_loss
from ppgbench.modelzoo import ModelSpec, S4DLayer, S4Spec, build_model, param_count

rng = np.random.default_rng(0)

spec = ModelSpec("inception1d", True, "SBP", 64, seed=0, width_scale=0.25)
model = build_model(spec).astype(np.float64)
print(f"{spec.name}: {param_count(model)} parameters")

x = Tensor(rng.standard_normal((2, 64)))
demo = Tensor(rng.standard_normal((2, 3)))
y = np.array([[1.0], [-1.0]])
res = grad_check(lambda: mse_loss(model(x, demo), y), model.parameters(),
                 h=(1e-5, 1e-6, 1e-7, 1e-8), max_coords=3)
print(f"gradient check over {res.n_checked} sampled coordinates: max relative error {res.max_rel_error:.2e}")

layer = S4DLayer(4, rng, S4Spec(state_dim=16))
u = rng.standard_normal((1, 4, 500)).astype(np.float32)
by_conv = layer(Tensor(u)).data
by_scan = layer.scan(u)
print(f"S4D layer, 500 steps: max |convolution - recurrence| = {np.abs(by_conv - by_scan).max():.2e}")
