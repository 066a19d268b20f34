"""SABER: standardized Atari evaluation, world-record scoring and a Rainbow-IQN core."""

__version__ = "0.1.0"
