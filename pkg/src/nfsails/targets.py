"""Synthetic 2D target distributions with exact densities and samplers.

These provide ground truth for both training data and evaluation: a ring of
isotropic Gaussians (the standard multimodality benchmark) and a two-moons
distribution. The mixture exposes its exact log-density and level sets; two
moons is generative-only, so density-based metrics raise a typed error rather
than silently approximating.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .rng import stream

__all__ = [
    "DensityUnavailableError",
    "GaussianMixtureTarget",
    "TwoMoonsTarget",
    "level_set_threshold",
    "parse_target",
    "sample_target",
    "target_log_density",
]


class DensityUnavailableError(RuntimeError):
    """The target has no closed-form density (two moons)."""


@dataclass(frozen=True)
class GaussianMixtureTarget:
    """k isotropic Gaussians, means equally spaced on a circle, equal weights."""

    k: int = 2
    radius: float = 4.0
    sigma: float = 0.3

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"component count must be >= 1, got {self.k}")
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")

    @property
    def means(self) -> np.ndarray:
        angles = 2.0 * math.pi * np.arange(self.k) / self.k
        return self.radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if n < 1:
            raise ValueError(f"sample count must be >= 1, got {n}")
        comps = rng.integers(self.k, size=n)
        return self.means[comps] + self.sigma * rng.standard_normal((n, 2))

    def log_density(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        diff = x[..., None, :] - self.means  # (..., k, 2)
        sq = np.sum(diff * diff, axis=-1)
        comp = -math.log(2.0 * math.pi * self.sigma**2) - sq / (2.0 * self.sigma**2)
        return logsumexp(comp, axis=-1) - math.log(self.k)

    def level_set_threshold(
        self, alpha: float, m: int = 100_000, seed: int = 0
    ) -> float:
        """Log-density value t with target mass alpha in {log p >= t}.

        Monte Carlo estimate: the upper-tail alpha quantile of log-density
        values over m fresh draws. A point counts as in-distribution iff its
        log-density is >= t.
        """
        if not 0.0 < alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
        draws = self.sample(m, stream(seed, "levelset"))
        return float(np.quantile(self.log_density(draws), 1.0 - alpha))

    def bounding_box(self, pad_sigmas: float = 6.0) -> tuple[float, float, float, float]:
        """(xmin, xmax, ymin, ymax) covering all modes with a noise margin."""
        pad = pad_sigmas * self.sigma
        lo, hi = -self.radius - pad, self.radius + pad
        return lo, hi, lo, hi


@dataclass(frozen=True)
class TwoMoonsTarget:
    """Two interleaving crescents with isotropic Gaussian noise.

    Only the generative procedure is known; there is no closed-form density,
    so :meth:`log_density` and level sets raise :class:`DensityUnavailableError`.
    """

    noise: float = 0.1
    radius: float = 1.0
    offset: float = 0.5

    def __post_init__(self):
        if self.noise <= 0:
            raise ValueError(f"noise must be positive, got {self.noise}")

    def arc_points(self, theta: np.ndarray, moon: np.ndarray) -> np.ndarray:
        """Noise-free arc coordinates for angles theta on the given moon (0/1)."""
        r = self.radius
        upper = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)
        lower = np.stack(
            [r * (1.0 - np.cos(theta)), -r * np.sin(theta) + self.offset], axis=1
        )
        return np.where(moon[:, None] == 0, upper, lower)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if n < 1:
            raise ValueError(f"sample count must be >= 1, got {n}")
        moon = rng.integers(2, size=n)
        theta = rng.uniform(0.0, math.pi, size=n)
        return self.arc_points(theta, moon) + self.noise * rng.standard_normal((n, 2))

    def log_density(self, x):
        raise DensityUnavailableError(
            "two-moons target has no closed-form density; density-based metrics "
            "are unavailable for it"
        )

    def level_set_threshold(self, alpha: float, m: int = 100_000, seed: int = 0):
        raise DensityUnavailableError(
            "two-moons target has no closed-form density; level sets are unavailable"
        )


Target = GaussianMixtureTarget | TwoMoonsTarget


def sample_target(spec: Target, n: int, seed: int) -> np.ndarray:
    """n i.i.d. draws from the target, deterministic given the seed."""
    return spec.sample(n, stream(seed, "target"))


def target_log_density(spec: Target, x) -> np.ndarray:
    """Exact target log-density; raises for density-free targets."""
    return spec.log_density(x)


def level_set_threshold(spec: Target, alpha: float, m: int = 100_000, seed: int = 0) -> float:
    return spec.level_set_threshold(alpha, m=m, seed=seed)


def parse_target(text: str) -> Target:
    """Parse the CLI target grammar.

    ``mixture:k=<int>[,r=<float>][,sigma=<float>]`` or
    ``twomoons[:noise=<float>]``.
    """
    head, _, rest = text.strip().partition(":")
    options: dict[str, str] = {}
    if rest:
        for item in rest.split(","):
            key, eq, value = item.partition("=")
            if not eq or not key or not value:
                raise ValueError(f"malformed target option {item!r} in {text!r}")
            options[key.strip()] = value.strip()
    try:
        if head == "mixture":
            kwargs = {}
            if "k" in options:
                kwargs["k"] = int(options.pop("k"))
            if "r" in options:
                kwargs["radius"] = float(options.pop("r"))
            if "sigma" in options:
                kwargs["sigma"] = float(options.pop("sigma"))
            if options:
                raise ValueError(f"unknown mixture options {sorted(options)}")
            return GaussianMixtureTarget(**kwargs)
        if head == "twomoons":
            kwargs = {}
            if "noise" in options:
                kwargs["noise"] = float(options.pop("noise"))
            if options:
                raise ValueError(f"unknown twomoons options {sorted(options)}")
            return TwoMoonsTarget(**kwargs)
    except ValueError as err:
        raise ValueError(f"invalid target spec {text!r}: {err}") from err
    raise ValueError(f"unknown target family {head!r} in {text!r}")
