"""Random valid architecture specs for round-trip and oracle tests."""

import numpy as np
from hypothesis import strategies as st

from edaseg.arch import ArchitectureSpec, Downsample, EdaBlock, Head


def random_spec(rng, max_depth=3, max_channels=64, max_growth=48, max_modules=6, max_dilation=16):
    depth = int(rng.integers(0, max_depth + 1))
    stages, n_block = [], 0

    def block():
        nonlocal n_block
        n_block += 1
        n = int(rng.integers(1, max_modules + 1))
        return EdaBlock(f"b{n_block}", int(rng.integers(1, max_growth + 1)),
                        tuple(int(d) for d in rng.integers(1, max_dilation + 1, n)))

    for _ in range(depth):
        if rng.random() < 0.5:
            stages.append(block())
        stages.append(Downsample(int(rng.integers(1, max_channels + 1))))
    if rng.random() < 0.7 or not stages:
        stages.append(block())
    stages.append(Head(2 ** depth))
    return ArchitectureSpec(f"random-{int(rng.integers(1 << 30))}", tuple(stages),
                            int(rng.integers(1, 5)))


specs = st.integers(0, 2**32 - 1).map(lambda s: random_spec(np.random.default_rng(s)))
