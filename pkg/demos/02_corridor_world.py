"""The synthetic corridor: one world, what the camera sees, and what the expert does."""
import tempfile

import numpy as np

from fusionsteer import dataset, synth
from fusionsteer.tensor import make_rng

rng = make_rng(3)
world = synth.generate_world(rng, difficulty=1)
print(f"corridor {world.width:.2f} m wide, light {world.light:.2f}, {len(world.obstacles)} obstacles")

state = synth.initial_state(world, rng)
rgb, depth = synth.render(world, state)
print("rgb", rgb.shape, rgb.dtype, "depth", depth.shape, depth.dtype)
# middle row of the depth image is the horizontal scan, in millimetres
print("depth along the horizon (every 24th column):", depth[0, 120, ::24])
print("expert says omega =", synth.expert_policy(world, state))

# Mirroring the world left-right mirrors the image and negates the command.
m_world, m_state = synth.mirror_world(world), synth.mirror_state(state)
m_rgb, m_depth = synth.render(m_world, m_state)
print("mirror image equal:", np.array_equal(m_depth, depth[:, :, ::-1]))
print("mirror omega:", synth.expert_policy(m_world, m_state))

# One episode: labels always come from the expert, even while a held random
# command is steering the robot off its preferred path.
labels = [label for _, _, label in synth.run_episode(world, make_rng(4), max_steps=60)]
print("episode labels:", " ".join(f"{v:+.1f}" for v in labels))

# A small dataset on disk, in the manifest + PPM/PGM layout.
with tempfile.TemporaryDirectory() as tmp:
    manifest = dataset.generate_dataset(make_rng(5), 40, tmp, image_size=48)
    print({s: len(manifest.split(s)) for s in dataset.SPLITS})
    print(open(f"{tmp}/manifest.csv").read().splitlines()[:3])
    print(open(f"{tmp}/norm.csv").read())
