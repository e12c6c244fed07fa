#!/usr/bin/env python3
"""Reference SSIM values for the metrics test suite.

Mirrors the LCG streams used in `metrics::tests::ssim_matches_reference_implementation`
and prints scikit-image's SSIM for the same image pair. The printed value is
frozen into that test as the expected reference.
"""

import numpy as np
from skimage.metrics import structural_similarity

MASK = (1 << 64) - 1


class Lcg:
    def __init__(self, seed: int):
        self.state = seed

    def next01(self) -> float:
        self.state = (self.state * 6364136223846793005 + 1442695040888963407) & MASK
        return (self.state >> 33) / float(1 << 31)


def plane(h: int, w: int, seed: int) -> np.ndarray:
    rng = Lcg(seed)
    return np.array([[rng.next01() for _ in range(w)] for _ in range(h)], dtype=np.float64)


def main() -> None:
    a = plane(24, 24, 7)
    b = plane(24, 24, 7)
    noise = Lcg(99)
    for y in range(24):
        for x in range(24):
            b[y, x] = min(1.0, max(0.0, b[y, x] + 0.1 * (noise.next01() - 0.5)))
    value = structural_similarity(
        a,
        b,
        gaussian_weights=True,
        sigma=1.5,
        use_sample_covariance=False,
        data_range=1.0,
    )
    print(f"REF_SSIM = {value!r}")


if __name__ == "__main__":
    main()
