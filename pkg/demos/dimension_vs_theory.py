"""Box-counting slopes of surviving realizations next to d + log p / log N."""
import numpy as np

from fracperc import ProcessParams, generate_level
from fracperc.dimension import config_box_dimension, theoretical_dimension
from fracperc.rng import trial_seeds

for p in (0.7, 0.85, 0.95):
    params = ProcessParams(2, 2, p, 0)
    slopes = []
    for s in trial_seeds(0, 100):
        cfg = generate_level(params.with_seed(int(s)), 10)
        if cfg.z_n:
            slopes.append(config_box_dimension(cfg).slope)
        if len(slopes) == 20:
            break
    print(f"p={p}: mean slope {np.mean(slopes):.3f} over {len(slopes)}, formula {theoretical_dimension(params):.3f}")
