"""How object motion during one gantry turn degrades sliding-window FBP.

A circle moves along an arc while the gantry rotates once. The faster it
moves, the more the FBP frames smear, which shows up as falling Dice.

    python demos/motion_artifacts.py
"""
import numpy as np

from neuralct.fbp import fbp_movie
from neuralct.pipeline import dice, mse
from neuralct.projector import GantrySchedule, render_sinogram
from neuralct.scene import GridSpec, SceneConfig, make_scene

N, VIEWS, FRAMES = 64, 180, 30

print(f"{'displacement':>12}  {'median Dice':>11}  {'median MSE':>10}")
for deg in (0, 20, 40, 70, 100, 150):
    scene = SceneConfig(displacement_deg=deg)
    truth = make_scene(scene, GridSpec(n=N, T=FRAMES))
    sino = render_sinogram(make_scene(scene, GridSpec(n=N, T=VIEWS)), GantrySchedule(VIEWS))
    fbp = fbp_movie(sino, truth.grid.times())
    print(f"{deg:>11}°  {np.median(dice(fbp, truth)):>11.3f}  {np.median(mse(fbp, truth)):>10.5f}")
