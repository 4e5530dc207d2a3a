"""Subtractively dithered uniform scalar quantization of clipped logits.

Each logit coordinate is clipped to [-clip, +clip], shifted by a known
uniform dither, quantized to ``bits_per_coord`` bits, and the same dither
is subtracted again on reconstruction.  For inputs strictly inside the
clip range the reconstruction error is uniform on [-step/2, +step/2],
zero mean, and independent of the input; every distortion formula in
:mod:`fpld.bounds` leans on exactly that property.

The dither is never transmitted.  Encoder and decoder regenerate it from
a shared (seed, node, round, probe) key, so the uplink pays for index
bits only (see :mod:`fpld.wire` for the bit-exact framing).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "ProtocolError",
    "QuantizerSpec",
    "DitherStream",
    "make_quantizer",
    "encode",
    "decode",
    "quantize_vector",
    "clip_active_count",
    "residual_specs",
    "refine_sequential",
]


class ProtocolError(ValueError):
    """A message violates the channel protocol (bad index, bad framing)."""


# Substream tags so truth generation, observation noise, and channel dither
# never share a random stream even under the same experiment seed.
PURPOSE_DITHER = 0
PURPOSE_TRUTH = 1
PURPOSE_NOISE = 2


@dataclass(frozen=True)
class QuantizerSpec:
    """Uniform quantizer over [-clip, +clip] with ``2**bits_per_coord`` cells.

    ``step`` is always ``2 * clip / 2**bits_per_coord``; the division by a
    power of two is exact in binary floating point.
    """

    clip: float
    bits_per_coord: int
    step: float

    @property
    def levels(self) -> int:
        return 1 << self.bits_per_coord


def make_quantizer(clip: float, bits_per_coord: int) -> QuantizerSpec:
    if not clip > 0:
        raise ValueError(f"clip must be positive, got {clip!r}")
    b = int(bits_per_coord)
    if b != bits_per_coord or b < 0:
        raise ValueError(f"bits_per_coord must be a non-negative integer, got {bits_per_coord!r}")
    step = 2.0 * float(clip) / (1 << b)
    return QuantizerSpec(clip=float(clip), bits_per_coord=b, step=step)


@dataclass(frozen=True)
class DitherStream:
    """Counter-based random stream keyed by (seed, node, round, probe).

    The same key always yields the same values, independent of thread or
    process schedule, which is what lets the decoder regenerate the
    encoder's dither and lets experiment runs be replayed byte for byte.
    Coordinates are consumed positionally within the keyed stream.
    """

    seed: int
    node: int = 0
    round_index: int = 0
    probe: int = 0

    def generator(self, purpose: int = PURPOSE_DITHER) -> np.random.Generator:
        key = np.random.SeedSequence(
            entropy=int(self.seed),
            spawn_key=(purpose, self.node, self.round_index, self.probe),
        )
        return np.random.Generator(np.random.Philox(key))

    def uniform(self, n: int, half_width: float) -> np.ndarray:
        """n i.i.d. dither values, uniform on [-half_width, +half_width]."""
        return self.generator().uniform(-half_width, half_width, size=n)

    def with_key(self, node: int | None = None, round_index: int | None = None,
                 probe: int | None = None) -> "DitherStream":
        return replace(
            self,
            node=self.node if node is None else node,
            round_index=self.round_index if round_index is None else round_index,
            probe=self.probe if probe is None else probe,
        )


def _check_dither(spec: QuantizerSpec, u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if np.any(np.abs(u) > spec.step / 2):
        raise ValueError(f"dither exceeds step/2 = {spec.step / 2}")
    return u


def encode(spec: QuantizerSpec, x, u):
    """Cell index of ``x`` under dither ``u``; fits in bits_per_coord bits.

    Inputs are clipped to [-clip, +clip] first, so index clamping can only
    trigger at the exact boundary (where the boundary maps to the extreme
    cell).
    """
    u = _check_dither(spec, u)
    y = np.clip(np.asarray(x, dtype=float), -spec.clip, spec.clip)
    idx = np.floor((y + u + spec.clip) / spec.step).astype(np.int64)
    idx = np.clip(idx, 0, spec.levels - 1)
    return idx if idx.ndim else int(idx)


def decode(spec: QuantizerSpec, index, u):
    """Reconstruction ``-clip + (index + 0.5) * step - u``.

    For undithered-in-range inputs the error is uniform on
    [-step/2, +step/2]; reconstructed magnitudes never exceed
    ``clip * (1 + 2**-bits_per_coord)``.
    """
    u = _check_dither(spec, u)
    idx = np.asarray(index)
    if np.any(idx < 0) or np.any(idx > spec.levels - 1):
        raise ProtocolError(f"index out of range [0, {spec.levels - 1}]")
    r = -spec.clip + (idx.astype(float) + 0.5) * spec.step - u
    return r if r.ndim else float(r)


def quantize_vector(spec: QuantizerSpec, values, stream: DitherStream | None):
    """Encode/decode a logit vector with one independent dither per coordinate.

    Returns ``(indices, reconstruction)``.  The payload cost of the indices
    is ``len(values) * bits_per_coord`` bits once packed.  ``stream=None``
    runs the plain (undithered) uniform quantizer, which the residual
    refinement rounds use.
    """
    v = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError("logit vector must be finite")
    if stream is None:
        u = np.zeros(v.shape)
    else:
        u = stream.uniform(v.size, spec.step / 2).reshape(v.shape)
    indices = encode(spec, v, u)
    return indices, decode(spec, indices, u)


def clip_active_count(spec: QuantizerSpec, values) -> int:
    """How many coordinates the clip actually truncates (|x| > clip)."""
    v = np.asarray(values, dtype=float)
    return int(np.count_nonzero(np.abs(v) > spec.clip))


def residual_specs(clip: float, bits_per_coord: int, rounds: int,
                   slack: float | None = None) -> list[QuantizerSpec]:
    """Geometric clip schedule for sequential residual refinement.

    Round t quantizes the residual left by round t-1; without dither that
    residual shrinks by ``2**-bits_per_coord`` per round, so round t uses
    ``clip * 2**(-(t-1) * bits_per_coord)``.  ``slack`` (>= 1) widens
    rounds t >= 2 to absorb the dither overshoot and defaults to
    ``1 + 2**-bits_per_coord``; round 1 keeps the caller's clip exactly so
    a single round coincides with :func:`quantize_vector`.
    """
    if rounds < 1:
        raise ValueError(f"rounds must be >= 1, got {rounds!r}")
    if slack is None:
        slack = 1.0 + 2.0 ** -bits_per_coord
    if slack < 1.0:
        raise ValueError(f"slack must be >= 1, got {slack!r}")
    specs = []
    for t in range(rounds):
        c = clip * 2.0 ** (-t * bits_per_coord)
        specs.append(make_quantizer(c if t == 0 else c * slack, bits_per_coord))
    return specs


def refine_sequential(specs: list[QuantizerSpec], values, stream: DitherStream):
    """Multi-round residual transmission; returns cumulative reconstructions.

    Round t (0-based) encodes ``values - reconstruction_{t-1}`` with
    ``specs[t]``.  The first round runs the dithered channel; later rounds
    quantize the residual undithered, since the round-1 dither already
    leaves the residual uniform and re-dithering would push it past the
    shrunken clip range.  Passing ``[spec] * T`` gives the fixed-step
    variant whose final error does not improve with extra rounds;
    :func:`residual_specs` gives the rescaled schedule whose error shrinks
    geometrically, reaching variance ``(clip * 2**(-T*bits))**2 / 3`` at
    slack 1.
    """
    if len(specs) < 1:
        raise ValueError("need at least one round spec")
    v = np.asarray(values, dtype=float)
    recon = np.zeros_like(v)
    out = []
    for t, spec in enumerate(specs):
        _, r = quantize_vector(spec, v - recon, stream if t == 0 else None)
        recon = recon + r
        out.append(recon.copy())
    return out
