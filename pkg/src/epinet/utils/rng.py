"""
Random Stream Module

Deterministic random streams for simulation replicas. A stream is addressed by
a (seed, stream) pair plus optional sub-keys; the same address always yields
the same generator, independently of how replicas are spread across workers.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RngSpec:
    """Address of a random stream.

    Attributes:
        seed: 64-bit base seed
        stream: Replica index
    """

    seed: int
    stream: int = 0

    def __post_init__(self):
        if self.stream < 0:
            raise ValueError(f"stream must be nonnegative, got {self.stream}")

    def generator(self, *subkeys):
        """
        Build the counter-based generator for this stream.

        Args:
            *subkeys: Extra nonnegative integers selecting a sub-stream
                (channel or node index in coupled simulations)

        Returns:
            numpy.random.Generator: A Philox-backed generator
        """
        sequence = np.random.SeedSequence(
            int(self.seed) & 0xFFFFFFFFFFFFFFFF,
            spawn_key=(int(self.stream),) + tuple(int(k) for k in subkeys)
        )
        return np.random.Generator(np.random.Philox(sequence))

    def child(self, stream):
        """Return the stream address of another replica under the same seed."""
        return RngSpec(self.seed, stream)


def make_generator(rng):
    """
    Normalize an rng argument into a numpy Generator.

    Args:
        rng: An RngSpec, a numpy Generator, or an integer seed

    Returns:
        numpy.random.Generator
    """
    if isinstance(rng, RngSpec):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    return RngSpec(int(rng)).generator()
