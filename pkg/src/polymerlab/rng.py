"""Counter-keyed random streams.

Every draw in polymerlab comes from a generator that is a pure function of an integer key, so
values never depend on how many draws happened before or on the order in which workers ask for them.
"""

import numpy as np

MASK64 = (1 << 64) - 1

POTENTIAL_STREAM = 0x504F54
TRIG_STREAM = 0x545249
NOISE_STREAM = 0x4E4F49
STEER_STREAM = 0x535445


def keyed_generator(seed: int, row: int, block: int, stream: int) -> np.random.Generator:
    """
    Philox generator keyed by (seed, row) and started at counter block `block` of `stream`
    :param seed: 64-bit master seed
    :param row: coordinate or potential row, negative values wrap as two's complement
    :param block: counter block, negative values wrap as two's complement
    :param stream: tag separating unrelated consumers of the same key
    :return:
    """
    key = np.array([seed & MASK64, row & MASK64], dtype=np.uint64)
    counter = np.array([0, 0, block & MASK64, stream & MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def derive_seed(*words: int) -> int:
    """Mix integers into one 64-bit seed"""
    sequence = np.random.SeedSequence([word & MASK64 for word in words])
    return int(sequence.generate_state(1, dtype=np.uint64)[0])
