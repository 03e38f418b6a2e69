"""2D toy datasets with ground-truth pairings, plus evaluation metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptySet, InvalidConfig
from .paired import PairDataset
from .rng import RngStream
from .unpaired import MarginalPools

TOY_NAMES = ("moons", "tshape", "gaussian_cross", "gaussian_shift")

TSHAPE_SOURCE_MODES = np.array([[-2.0, 1.0], [0.0, -2.0]])
TSHAPE_TARGET_MODES = np.array([[2.0, 1.0], [0.0, 1.0]])
CROSS_SOURCE_MODES = np.array([[-2.0, -2.0], [-2.0, 2.0]])
CROSS_TARGET_MODES = np.array([[2.0, 2.0], [2.0, -2.0]])


@dataclass(frozen=True)
class ToySpec:
    """Which toy to generate, how many samples, noise level, seed."""

    name: str
    n: int = 1000
    noise: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.name not in TOY_NAMES:
            raise InvalidConfig("name", f"unknown dataset '{self.name}', "
                                        f"expected one of {TOY_NAMES}")
        if self.n < 1:
            raise InvalidConfig("n", f"need n >= 1, got {self.n}")
        if self.noise is not None and self.noise < 0:
            raise InvalidConfig("noise", f"need noise >= 0, got {self.noise}")

    def noise_or_default(self) -> float:
        if self.noise is not None:
            return self.noise
        return {"moons": 0.1, "tshape": 0.2,
                "gaussian_cross": 0.2, "gaussian_shift": 1.0}[self.name]


def gen_moons(spec: ToySpec) -> PairDataset:
    """Two interleaving half circles; targets are the same points rotated
    90 degrees clockwise about the cloud centroid, so pairs are isometric."""
    rng = RngStream(spec.seed, stream_id=101)
    noise = spec.noise_or_default()
    n = spec.n
    n_outer = (n + 1) // 2
    theta = rng.uniform(0.0, np.pi, size=n)
    pts = np.empty((n, 2))
    pts[:n_outer, 0] = np.cos(theta[:n_outer])
    pts[:n_outer, 1] = np.sin(theta[:n_outer])
    pts[n_outer:, 0] = 1.0 - np.cos(theta[n_outer:])
    pts[n_outer:, 1] = 0.5 - np.sin(theta[n_outer:])
    pts += noise * rng.standard_normal((n, 2))
    center = pts.mean(axis=0)
    rot = np.array([[0.0, 1.0], [-1.0, 0.0]])   # clockwise quarter turn
    rotated = (pts - center) @ rot.T + center
    return PairDataset(pts, rotated)


def gen_tshape(spec: ToySpec) -> PairDataset:
    """Bimodal source on two extremes of a T (arm half-width 2, stem depth 3);
    each mode is translated to the opposite extreme, point to shifted point."""
    rng = RngStream(spec.seed, stream_id=102)
    noise = spec.noise_or_default()
    modes = rng.integers(0, 2, size=spec.n)
    x0 = TSHAPE_SOURCE_MODES[modes] + noise * rng.standard_normal((spec.n, 2))
    shift = TSHAPE_TARGET_MODES - TSHAPE_SOURCE_MODES
    x1 = x0 + shift[modes]
    return PairDataset(x0, x1)


def gen_gaussian_cross(spec: ToySpec) -> PairDataset:
    """Samples around (-2,-2) pair with ones around (2,2); samples around
    (-2,2) pair with ones around (2,-2). Draws are independent per side."""
    rng = RngStream(spec.seed, stream_id=103)
    noise = spec.noise_or_default()
    modes = rng.integers(0, 2, size=spec.n)
    x0 = CROSS_SOURCE_MODES[modes] + noise * rng.standard_normal((spec.n, 2))
    x1 = CROSS_TARGET_MODES[modes] + noise * rng.standard_normal((spec.n, 2))
    return PairDataset(x0, x1)


def gen_gaussian_shift(spec: ToySpec) -> MarginalPools:
    """Unpaired 1D pools: N(0,1) and N(2,1)."""
    rng = RngStream(spec.seed, stream_id=104)
    sd = spec.noise_or_default()
    pool0 = sd * rng.standard_normal((spec.n, 1))
    pool1 = 2.0 + sd * rng.standard_normal((spec.n, 1))
    return MarginalPools(pool0, pool1)


def make_dataset(spec: ToySpec):
    return {"moons": gen_moons, "tshape": gen_tshape,
            "gaussian_cross": gen_gaussian_cross,
            "gaussian_shift": gen_gaussian_shift}[spec.name](spec)


# -- metrics -------------------------------------------------------------------


def wasserstein1(samples_a: np.ndarray, samples_b: np.ndarray) -> float:
    """Per-dimension 1D Wasserstein-1 via sorting, averaged over dimensions.

    Unequal counts are handled by reducing the larger set to evenly spaced
    order statistics, which keeps the estimate deterministic.
    """
    a = np.atleast_2d(np.asarray(samples_a, dtype=float).T).T
    b = np.atleast_2d(np.asarray(samples_b, dtype=float).T).T
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise EmptySet("wasserstein1 needs nonempty sample sets")
    if a.shape[1] != b.shape[1]:
        raise EmptySet(f"dimension mismatch {a.shape[1]} vs {b.shape[1]}")
    n = min(a.shape[0], b.shape[0])

    def reduced(s: np.ndarray) -> np.ndarray:
        s = np.sort(s, axis=0)
        if s.shape[0] == n:
            return s
        idx = ((np.arange(n) + 0.5) * s.shape[0] / n).astype(int)
        return s[idx]

    return float(np.mean(np.abs(reduced(a) - reduced(b))))


def mode_accuracy(generated: np.ndarray, sources: np.ndarray,
                  source_centroids: np.ndarray, target_centroids: np.ndarray,
                  pairing: np.ndarray) -> float:
    """Fraction of endpoints landing in the target mode paired with their
    source's nearest source mode (nearest-centroid assignment)."""
    generated = np.asarray(generated, dtype=float)
    sources = np.asarray(sources, dtype=float)
    pairing = np.asarray(pairing, dtype=int)
    d_src = np.linalg.norm(sources[:, None, :] - source_centroids[None], axis=2)
    d_gen = np.linalg.norm(generated[:, None, :] - target_centroids[None], axis=2)
    expected = pairing[np.argmin(d_src, axis=1)]
    got = np.argmin(d_gen, axis=1)
    return float(np.mean(expected == got))


# -- CSV -----------------------------------------------------------------------


def write_pairs_csv(path, dataset: PairDataset) -> None:
    d = dataset.x0.shape[1]
    cols = [f"x0_{i + 1}" for i in range(d)] + [f"x1_{i + 1}" for i in range(d)]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(cols) + "\n")
        for r0, r1 in zip(dataset.x0, dataset.x1):
            fh.write(",".join(repr(float(v)) for v in (*r0, *r1)) + "\n")


def read_pairs_csv(path) -> PairDataset:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        d = sum(1 for c in header if c.startswith("x0_"))
        rows = [[float(v) for v in line.strip().split(",")]
                for line in fh if line.strip()]
    arr = np.array(rows)
    if arr.shape[0] == 0:
        raise EmptySet(f"no rows in {path}")
    return PairDataset(arr[:, :d], arr[:, d:2 * d])
