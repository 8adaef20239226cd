"""Street-safety perception platform: pairwise surveys, a two-class perceptron
over pretrained image features, synthetic vote generation, and zone maps."""

__version__ = "0.1.0"
