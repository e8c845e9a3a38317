"""Reconstruct a moving circle with a neural SDF and compare against FBP.

Small settings so this finishes in a couple of minutes on a laptop core.
Pass a displacement in degrees as the first argument (default 40).

    python demos/reconstruct_circle.py 40
"""
import sys

import numpy as np

from neuralct.fbp import fbp_movie
from neuralct.optim import OptimConfig
from neuralct.pipeline import PipelineConfig, dice, reconstruct
from neuralct.projector import GantrySchedule, render_sinogram
from neuralct.scene import GridSpec, SceneConfig, make_scene

deg = float(sys.argv[1]) if len(sys.argv) > 1 else 40.0
n, views, frames = 48, 120, 30

scene = SceneConfig(displacement_deg=deg, radius=0.2, orbit_radius=0.4)
truth = make_scene(scene, GridSpec(n=n, T=frames))
sino = render_sinogram(make_scene(scene, GridSpec(n=n, T=views)), GantrySchedule(views))

cfg = PipelineConfig(
    hidden=48,
    M=8,
    frames=frames,
    init_iterations=300,
    init_lr=3e-4,
    class_intensity=(1.0,),
    optim=OptimConfig(lr=5e-5, max_iterations=600),
)
movie, record = reconstruct(sino, cfg=cfg, scene=scene)
fbp = fbp_movie(sino, truth.grid.times())

print(f"displacement {deg:g}°")
print(f"  FBP       median Dice {np.median(dice(fbp, truth)):.3f}")
print(f"  NeuralCT  median Dice {np.median(dice(movie, truth)):.3f}")
for stage, secs in record.stage_seconds.items():
    print(f"  {stage:<22} {secs:6.1f}s")
