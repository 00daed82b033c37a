"""zipmo: temporally compressed latent motion spaces for point tracks.

Stage 1 compresses sets of trajectories into a latent grid queryable at
arbitrary spatial positions; stage 2 generates motion latents with conditional
flow matching steered by pokes and labels.
"""

__version__ = "0.1.0"
