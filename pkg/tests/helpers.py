import numpy as np

from wpscatter.foundation import WaveFunction


def packets(grid, seed, count=3, width=1.5, kmax=2.0, spread=None):
    """Normalised sum of random Gaussian packets (band-limited to grid precision)."""
    rng = np.random.default_rng(seed)
    spread = grid.L / 4 if spread is None else spread
    vals = np.zeros(grid.shape, dtype=complex)
    for _ in range(count):
        x0 = rng.uniform(-spread, spread, grid.n)
        k0 = rng.uniform(-kmax, kmax, grid.n)
        amp = rng.normal() + 1j * rng.normal()
        z2 = sum((c - x0[j]) ** 2 for j, c in enumerate(grid.coords))
        ph = sum(k0[j] * c for j, c in enumerate(grid.coords))
        vals = vals + amp * np.exp(-z2 / (2 * width**2) + 1j * ph)
    f = WaveFunction(grid, vals)
    return f * (1.0 / np.sqrt(np.sum(np.abs(vals) ** 2) * grid.weight))
