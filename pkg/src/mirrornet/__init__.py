"""Sensorimotor autoencoder for acoustic-to-articulatory speech inversion.

An encoder maps auditory spectrograms to articulatory trajectories (six
vocal tract variables plus source features); a decoder maps them back. A
frozen articulatory synthesizer in a parallel path constrains the latent
space during alternating-stage training, and a brief supervised
initialization phase steers it toward physically meaningful trajectories.
"""

__version__ = "0.1.0"
