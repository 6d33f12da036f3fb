"""White-in-time, smooth-in-space random forcing on the unit circle.

The forcing potential is a finite harmonic sum

    F(x, t) = sum_k F_k(x) dB_k/dt,   F_k(x) = a_k cos(2 pi m_k (x + phi_k)) / (2 pi m_k)

so each mode has zero spatial mean and the force felt by characteristics is

    f_k(x) = F_k'(x) = -a_k sin(2 pi m_k (x + phi_k)).

Brownian increments are drawn from a counter-based generator, so any step of
any mode is addressable by (seed, stream, step) without sequential replay.
Two paths built from the same seed agree bit-exactly wherever their step
ranges overlap, which is what makes backward-in-time constructions cheap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.random import Philox

from .errors import ConfigError

TWO_PI = 2.0 * math.pi

# Streams 0..2^48-1 are forcing modes.  Auxiliary consumers get disjoint
# namespaces so adding modes never perturbs their draws.
BRIDGE_STREAM_BASE = 1 << 48
USER_STREAM_BASE = 1 << 49

# Counter offset so that negative step indices stay addressable: the block
# counter is unsigned, so logical step n lives at block n + _BLOCK_OFFSET.
_BLOCK_OFFSET = 1 << 62
_SEED_MIX = 0x9E3779B97F4A7C15
_MASK64 = (1 << 64) - 1


def _philox_words(seed: int, stream: int, start: int, count: int) -> np.ndarray:
    """Raw 64-bit words for `count` consecutive counter blocks.

    One Philox block is 4 words; advance(1) skips exactly one block, so
    logical step n always maps to the same block regardless of how many
    draws preceded it.
    """
    key = np.array(
        [(seed ^ _SEED_MIX) & _MASK64, stream & _MASK64], dtype=np.uint64
    )
    bg = Philox(key=key)
    bg.advance(start + _BLOCK_OFFSET)
    return bg.random_raw(4 * count).reshape(count, 4)


def normal_draws(seed: int, stream: int, start: int, count: int) -> np.ndarray:
    """One standard normal per step index, Box-Muller on words 0 and 1.

    Shifting by 11 bits keeps 53 significant bits; the +0.5 centers the
    uniforms inside (0, 1) so the log never sees zero.
    """
    if count < 0:
        raise ConfigError(f"count must be >= 0, got {count}")
    if count == 0:
        return np.empty(0, dtype=np.float64)
    w = _philox_words(seed, stream, start, count)
    u1 = ((w[:, 0] >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    u2 = ((w[:, 1] >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(TWO_PI * u2)


@dataclass(frozen=True)
class Mode:
    """One harmonic forcing mode: amplitude, integer frequency, phase shift."""

    amplitude: float
    frequency: int
    phase: float

    def __post_init__(self):
        if not isinstance(self.frequency, (int, np.integer)):
            raise ConfigError(f"frequency must be an integer, got {self.frequency!r}")
        if self.frequency < 1:
            raise ConfigError(f"frequency must be >= 1, got {self.frequency}")
        if not math.isfinite(self.amplitude) or not math.isfinite(self.phase):
            raise ConfigError("amplitude and phase must be finite")

    def potential(self, x):
        """F_k(x), zero-mean antiderivative of the force."""
        m = self.frequency
        return self.amplitude * np.cos(TWO_PI * m * (np.asarray(x) + self.phase)) / (TWO_PI * m)

    def force(self, x):
        """f_k(x) = F_k'(x)."""
        m = self.frequency
        return -self.amplitude * np.sin(TWO_PI * m * (np.asarray(x) + self.phase))

    def force_deriv(self, x):
        """f_k'(x), needed for tangent (Jacobi) dynamics."""
        m = self.frequency
        return -self.amplitude * TWO_PI * m * np.cos(TWO_PI * m * (np.asarray(x) + self.phase))

    def c_norm(self, r: int) -> float:
        """C^r norm of the potential F_k, max over derivative orders 0..r.

        |F_k^(d)|_sup = |a| (2 pi m)^(d-1), increasing in d since 2 pi m > 1,
        so the max sits at the highest order.
        """
        if r < 0:
            raise ConfigError(f"norm order must be >= 0, got {r}")
        return abs(self.amplitude) * (TWO_PI * self.frequency) ** (r - 1)


@dataclass(frozen=True)
class ForcingSpec:
    """Immutable collection of forcing modes with validated decay.

    decay_constant: the C in the summability discipline
    ||f_k||_C3 <= C / k^2 over the declared mode order (k is 1-based).
    Defaults to the smallest C that makes every declared mode pass.
    """

    modes: tuple
    decay_constant: float | None = None

    def __post_init__(self):
        if not self.modes:
            raise ConfigError("need at least one forcing mode")
        modes = tuple(self.modes)
        object.__setattr__(self, "modes", modes)
        for mode in modes:
            if not isinstance(mode, Mode):
                raise ConfigError(f"modes must be Mode instances, got {mode!r}")
        needed = max(
            m.c_norm(3) * (k + 1) ** 2 for k, m in enumerate(modes)
        )
        if self.decay_constant is None:
            object.__setattr__(self, "decay_constant", needed)
        elif self.decay_constant < needed:
            raise ConfigError(
                f"declared decay constant {self.decay_constant} < required {needed}"
            )
        # Zero spatial mean of each F_k holds by construction (cos integrates
        # to zero over whole periods); spot-check numerically anyway so a
        # future edit to the mode formula cannot silently break it.
        xs = np.arange(256) / 256.0
        for mode in modes:
            if abs(float(np.mean(mode.potential(xs)))) > 1e-12 * (1 + abs(mode.amplitude)):
                raise ConfigError(f"mode {mode} has nonzero spatial mean")

    @property
    def n_modes(self) -> int:
        return len(self.modes)

    def potential_table(self, x) -> np.ndarray:
        """Stack of F_k(x), shape (n_modes,) + shape(x)."""
        return np.stack([m.potential(x) for m in self.modes])

    def force_table(self, x) -> np.ndarray:
        """Stack of f_k(x)."""
        return np.stack([m.force(x) for m in self.modes])

    def force_deriv_table(self, x) -> np.ndarray:
        """Stack of f_k'(x)."""
        return np.stack([m.force_deriv(x) for m in self.modes])

    def c_norms(self, r: int) -> np.ndarray:
        """Per-mode C^r norms of the potentials F_k."""
        return np.array([m.c_norm(r) for m in self.modes])

    def scaled(self, factor: float) -> "ForcingSpec":
        """Same modes with every amplitude multiplied by `factor`."""
        if not math.isfinite(factor):
            raise ConfigError("scale factor must be finite")
        return ForcingSpec(
            tuple(Mode(m.amplitude * factor, m.frequency, m.phase) for m in self.modes)
        )

    def to_dict(self) -> dict:
        return {
            "modes": [
                {"amplitude": m.amplitude, "frequency": m.frequency, "phase": m.phase}
                for m in self.modes
            ],
            "decay_constant": self.decay_constant,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ForcingSpec":
        try:
            modes = tuple(
                Mode(float(m["amplitude"]), int(m["frequency"]), float(m["phase"]))
                for m in d["modes"]
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed forcing spec: {exc}") from exc
        dc = d.get("decay_constant")
        return cls(modes, None if dc is None else float(dc))


def preset_spec(name: str) -> ForcingSpec:
    """Named mode collections used throughout the experiments.

    ekms3          three unit-amplitude frequency-1 cosines at staggered phases
    single_cosine  one cosine mode, the degenerate two-shock benchmark
    sine_basic     f(x) = sin(2 pi x), i.e. F(x) = -cos(2 pi x) / (2 pi)
    """
    if name == "ekms3":
        modes = (Mode(1.0, 1, 0.0), Mode(1.0, 1, 0.17), Mode(1.0, 1, 0.41))
    elif name == "single_cosine":
        modes = (Mode(1.0, 1, 0.0),)
    elif name == "sine_basic":
        modes = (Mode(-1.0, 1, 0.0),)
    else:
        raise ConfigError(f"unknown forcing preset {name!r}")
    return ForcingSpec(modes)


def zero_spec() -> ForcingSpec:
    """Single zero-amplitude mode: the unforced equation."""
    return ForcingSpec((Mode(0.0, 1, 0.0),))


@dataclass(frozen=True)
class BrownianPath:
    """Grid-sampled Brownian increments for every forcing mode.

    increments[k, j] = B_k((t_origin + j + 1) dt) - B_k((t_origin + j) dt),
    one column per step, addressed by the absolute step index
    n in [t_origin, t_origin + n_steps).  `pure` marks paths whose columns
    come straight from the counter generator and can therefore be extended;
    mollified paths are derived and cannot.
    """

    seed: int
    dt: float
    n_steps: int
    t_origin: int
    increments: np.ndarray = field(repr=False)
    pure: bool = True

    def __post_init__(self):
        if self.dt <= 0 or not math.isfinite(self.dt):
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if self.n_steps < 1:
            raise ConfigError(f"n_steps must be >= 1, got {self.n_steps}")
        inc = np.asarray(self.increments, dtype=np.float64)
        if inc.ndim != 2 or inc.shape[1] != self.n_steps:
            raise ConfigError(
                f"increments must be (n_modes, n_steps), got {inc.shape}"
            )
        inc = inc.copy()
        inc.setflags(write=False)
        object.__setattr__(self, "increments", inc)

    @property
    def n_modes(self) -> int:
        return self.increments.shape[0]

    @property
    def t_end(self) -> int:
        return self.t_origin + self.n_steps

    def in_range(self, n: int) -> bool:
        return self.t_origin <= n < self.t_end

    def _col(self, n: int) -> int:
        if not self.in_range(n):
            raise IndexError(
                f"step {n} outside covered range [{self.t_origin}, {self.t_end})"
            )
        return n - self.t_origin

    def increments_at(self, n: int) -> np.ndarray:
        """All mode increments over step n, shape (n_modes,)."""
        return self.increments[:, self._col(n)]

    def window(self, n0: int, n1: int) -> np.ndarray:
        """Increment block for absolute steps [n0, n1), shape (n_modes, n1-n0)."""
        if n1 <= n0:
            raise IndexError(f"empty window [{n0}, {n1})")
        self._col(n0)
        self._col(n1 - 1)
        return self.increments[:, n0 - self.t_origin : n1 - self.t_origin]

    def cumulative(self, n0: int, n1: int) -> np.ndarray:
        """B_k values on grid times n0..n1 with B(n0 dt) = 0, shape (K, n1-n0+1)."""
        inc = self.window(n0, n1)
        out = np.zeros((self.n_modes, inc.shape[1] + 1))
        np.cumsum(inc, axis=1, out=out[:, 1:])
        return out


def sample_path(
    spec: ForcingSpec, seed: int, dt: float, n_steps: int, t_origin: int = 0
) -> BrownianPath:
    """Draw the increment table for `spec` over steps [t_origin, t_origin + n_steps).

    Mode k reads stream k, one counter block per absolute step, so overlapping
    windows from the same seed agree exactly.
    """
    if dt <= 0 or not math.isfinite(dt):
        raise ConfigError(f"dt must be positive, got {dt}")
    if n_steps < 1:
        raise ConfigError(f"n_steps must be >= 1, got {n_steps}")
    root = math.sqrt(dt)
    inc = np.empty((spec.n_modes, n_steps))
    for k in range(spec.n_modes):
        inc[k] = root * normal_draws(seed, k, t_origin, n_steps)
    return BrownianPath(seed, dt, n_steps, t_origin, inc)


def eval_force(spec: ForcingSpec, path: BrownianPath, x, n: int):
    """Velocity kick sum_k f_k(x) dB_k over step n; x scalar or array."""
    db = path.increments_at(n)
    return np.tensordot(db, spec.force_table(x), axes=(0, 0))


def eval_potential(spec: ForcingSpec, path: BrownianPath, x, n: int):
    """Potential kick sum_k F_k(x) dB_k over step n."""
    db = path.increments_at(n)
    return np.tensordot(db, spec.potential_table(x), axes=(0, 0))


def mollify(path: BrownianPath, delta: float) -> BrownianPath:
    """Centered moving average of the increments with window delta.

    The window width is w = round(delta / dt) steps; w = 1 returns the path
    unchanged.  Columns near the ends need increments outside the covered
    range, which are regenerated from the counter generator, so the result
    covers exactly the same steps as the input.
    """
    if not path.pure:
        raise ConfigError("can only mollify a pure counter-generated path")
    if delta < path.dt:
        raise ConfigError(f"delta {delta} below the step size {path.dt}")
    w = int(round(delta / path.dt))
    if w <= 1:
        return path
    lo = path.t_origin - (w // 2)
    n_ext = path.n_steps + w - 1
    root = math.sqrt(path.dt)
    sm = np.empty((path.n_modes, path.n_steps))
    kernel = np.full(w, 1.0 / w)
    for k in range(path.n_modes):
        ext = root * normal_draws(path.seed, k, lo, n_ext)
        sm[k] = np.convolve(ext, kernel, mode="valid")
    return BrownianPath(path.seed, path.dt, path.n_steps, path.t_origin, sm, pure=False)


@dataclass(frozen=True)
class ForceNorm:
    """Windowed forcing magnitude and the induced a-priori constant."""

    value: float
    window: tuple
    c1: float


def force_norm(spec: ForcingSpec, path: BrownianPath, window: tuple) -> ForceNorm:
    """Anchored sup of the kicked potential over `window` = (n0, n1).

    value = max over grid times s in [n0, n1] of
            sum_k ||F_k||_C3 |B_k(s) - B_k(n1)|,
    anchored at the right end, so norms over nested windows sharing an end
    are monotone in the window.  c1 is the same construction with C2 norms
    over one time unit ending at n1 (clipped to the path's coverage),
    plus 1/4.
    """
    n0, n1 = int(window[0]), int(window[1])
    if n1 <= n0:
        raise ConfigError(f"window must satisfy n0 < n1, got ({n0}, {n1})")
    b = path.cumulative(n0, n1)
    rel = b - b[:, -1:]
    value = float(np.max(spec.c_norms(3) @ np.abs(rel)))

    unit = max(1, int(round(1.0 / path.dt)))
    m0 = max(n1 - unit, path.t_origin)
    bu = path.cumulative(m0, n1)
    relu = bu - bu[:, -1:]
    c1 = 0.25 + float(np.max(spec.c_norms(2) @ np.abs(relu)))
    return ForceNorm(value, (n0, n1), c1)
