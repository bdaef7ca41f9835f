"""Class-conditional progressive GAN with self-attention for sign image synthesis."""
__version__ = "0.1.0"
