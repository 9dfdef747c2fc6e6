"""Disturbance sequences ``v = (v_0, v_1, ...)`` with a known sup-norm."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

KINDS = ("zero", "constant", "decaying", "random", "custom")


@dataclass(frozen=True)
class DisturbanceSequence:
    """Deterministic, index-addressable disturbance generator.

    ``sample(k)`` depends only on ``k`` and the construction parameters, so
    two runs with the same configuration see identical disturbances.

    Kinds
    -----
    zero
        ``v_k = 0``.
    constant
        ``v_k = c`` where ``c`` is broadcast to the disturbance shape.
    decaying
        ``v_k = c * rate**k``.
    random
        Uniformly random direction, norm uniform in ``(0, magnitude]``.
    custom
        Explicit list of values, zero once the list is exhausted.
    """

    kind: str
    shape: tuple = (1,)
    magnitude: float = 0.0
    value: np.ndarray | None = None
    rate: float = 0.5
    seed: int = 0
    values: tuple = field(default=())

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown disturbance kind {self.kind!r}; expected one of {KINDS}")
        shape = (self.shape,) if np.isscalar(self.shape) else tuple(int(s) for s in self.shape)
        object.__setattr__(self, "shape", shape)
        if self.kind in ("constant", "decaying"):
            c = self.value if self.value is not None else self.magnitude
            c = np.broadcast_to(np.asarray(c, dtype=float), shape).copy()
            object.__setattr__(self, "value", c)
        if self.kind == "decaying" and not 0 <= self.rate < 1:
            raise ConfigError("decaying disturbance needs 0 <= rate < 1")
        if self.kind == "random" and self.magnitude < 0:
            raise ConfigError("random disturbance needs a nonnegative magnitude")
        if self.kind == "custom":
            vals = tuple(np.broadcast_to(np.asarray(v, dtype=float), shape).copy()
                         for v in self.values)
            object.__setattr__(self, "values", vals)

    # Constructors mirroring the CLI mini-language.
    @classmethod
    def zero(cls, shape=(1,)):
        return cls("zero", shape)

    @classmethod
    def constant(cls, c, shape=(1,)):
        return cls("constant", shape, value=np.asarray(c, dtype=float))

    @classmethod
    def decaying(cls, c, rate=0.5, shape=(1,)):
        return cls("decaying", shape, value=np.asarray(c, dtype=float), rate=rate)

    @classmethod
    def random_bounded(cls, delta, seed=0, shape=(1,)):
        return cls("random", shape, magnitude=float(delta), seed=int(seed))

    @classmethod
    def custom(cls, values, shape=(1,)):
        return cls("custom", shape, values=tuple(values))

    def with_shape(self, shape) -> "DisturbanceSequence":
        """Same sequence description for a different disturbance shape."""
        value = None
        if self.kind in ("constant", "decaying"):
            flat = np.unique(self.value)
            if flat.size != 1:
                raise ConfigError("cannot reshape a non-uniform disturbance")
            value = flat[0]
        return DisturbanceSequence(self.kind, shape, self.magnitude, value,
                                   self.rate, self.seed, self.values)

    @property
    def sup_norm(self) -> float:
        if self.kind == "zero":
            return 0.0
        if self.kind in ("constant", "decaying"):
            return float(np.linalg.norm(self.value))
        if self.kind == "random":
            return float(self.magnitude)
        return max((float(np.linalg.norm(v)) for v in self.values), default=0.0)

    def sample(self, k: int) -> np.ndarray:
        if self.kind == "zero":
            return np.zeros(self.shape)
        if self.kind == "constant":
            return self.value.copy()
        if self.kind == "decaying":
            return self.value * self.rate**k
        if self.kind == "random":
            rng = np.random.default_rng([self.seed, k])
            d = rng.standard_normal(self.shape)
            d /= max(np.linalg.norm(d), 1e-300)
            return self.magnitude * rng.uniform(0.0, 1.0) * d
        return self.values[k].copy() if k < len(self.values) else np.zeros(self.shape)

    def describe(self) -> str:
        if self.kind == "zero":
            return "zero"
        if self.kind == "random":
            return f"random:{self.magnitude:g}:seed={self.seed}"
        if self.kind == "decaying":
            return f"decay:{self.sup_norm:g}:rate={self.rate:g}"
        if self.kind == "constant":
            return f"const:{self.sup_norm:g}"
        return f"custom:{len(self.values)}"


def parse_disturbance(text: str, shape=(1,)) -> DisturbanceSequence:
    """Parse ``kind[:magnitude][:key=value...]``.

    Examples: ``zero``, ``const:1e-3``, ``decay:1e-2:rate=0.5``,
    ``random:1e-3:seed=7``. Constant and decaying magnitudes are applied to
    every component.
    """
    parts = [p.strip() for p in str(text).split(":") if p.strip()]
    if not parts:
        raise ConfigError("empty disturbance spec")
    kind, rest = parts[0].lower(), parts[1:]
    opts, pos = {}, []
    for p in rest:
        if "=" in p:
            key, val = p.split("=", 1)
            opts[key.strip()] = val.strip()
        else:
            pos.append(p)
    try:
        mag = float(pos[0]) if pos else 0.0
        if kind in ("zero", "none"):
            return DisturbanceSequence.zero(shape)
        if kind in ("const", "constant"):
            return DisturbanceSequence("constant", shape, value=mag)
        if kind in ("decay", "decaying"):
            return DisturbanceSequence("decaying", shape, value=mag,
                                       rate=float(opts.get("rate", 0.5)))
        if kind in ("random", "rand"):
            return DisturbanceSequence.random_bounded(mag, int(opts.get("seed", 0)), shape)
    except ValueError as exc:
        raise ConfigError(f"bad disturbance spec {text!r}: {exc}") from exc
    raise ConfigError(f"unknown disturbance kind {kind!r} in {text!r}")
