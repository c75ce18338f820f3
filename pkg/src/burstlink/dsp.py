"""Stream-domain DSP primitives.

Each operation exists twice: a one-shot function over a whole array, and a
stateful kernel class whose ``process`` method accepts the stream in chunks
and carries history across calls. Both share the same arithmetic, and the
kernels are wrapped as flowgraph blocks at the bottom of the module.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy import signal

from .runtime import Block, FunctionBlock, SyncBlock

EPS = 1e-12


@dataclass(frozen=True)
class FirTaps:
    coefficients: np.ndarray
    gain: float = 1.0

    def __post_init__(self):
        c = np.asarray(self.coefficients)
        if c.ndim != 1 or len(c) < 1:
            raise ValueError("taps must be a non-empty vector")
        if not np.all(np.isfinite(c)):
            raise ValueError("taps must be finite")
        object.__setattr__(self, "coefficients", c)

    def __len__(self):
        return len(self.coefficients)

    def scaled(self, g: float) -> "FirTaps":
        return FirTaps(self.coefficients * g, self.gain * g)

    @property
    def delay(self) -> float:
        """Group delay in samples for a linear-phase design."""
        return (len(self.coefficients) - 1) / 2


def _coeffs(taps) -> np.ndarray:
    return taps.coefficients if isinstance(taps, FirTaps) else np.asarray(taps)


def rrc_impulse(t: np.ndarray, beta: float) -> np.ndarray:
    """Root-raised-cosine pulse at times ``t`` measured in symbol periods."""
    t = np.asarray(t, dtype=np.float64)
    h = np.empty_like(t)
    at_zero = np.abs(t) < 1e-12
    at_sing = np.abs(np.abs(t) - 1 / (4 * beta)) < 1e-9
    rest = ~(at_zero | at_sing)
    h[at_zero] = 1 - beta + 4 * beta / np.pi
    h[at_sing] = beta / np.sqrt(2) * (
        (1 + 2 / np.pi) * np.sin(np.pi / (4 * beta)) + (1 - 2 / np.pi) * np.cos(np.pi / (4 * beta))
    )
    tr = t[rest]
    h[rest] = (np.sin(np.pi * tr * (1 - beta)) + 4 * beta * tr * np.cos(np.pi * tr * (1 + beta))) / (
        np.pi * tr * (1 - (4 * beta * tr) ** 2)
    )
    return h


def design_rrc(sps: int, beta: float, span: int, offset: float = 0.0) -> FirTaps:
    """Unit-energy RRC taps, ``sps * span + 1`` long.

    ``offset`` (in samples) delays the sampled pulse, which turns the filter
    into a matched filter for a fractionally shifted symbol clock.
    """
    if sps < 1 or span < 2 or not 0 < beta <= 1:
        raise ValueError(f"invalid RRC parameters sps={sps} beta={beta} span={span}")
    ntaps = sps * span + 1
    if ntaps % 2 == 0:
        raise ValueError("sps * span + 1 must be odd")
    t = (np.arange(ntaps) - (ntaps - 1) / 2 - offset) / sps
    h = rrc_impulse(t, beta)
    return FirTaps(h / np.sqrt(np.sum(h ** 2)))


def upsample(x: np.ndarray, factor: int) -> np.ndarray:
    y = np.zeros(len(x) * factor, dtype=np.result_type(x, np.float64))
    y[::factor] = x
    return y


def fir_filter(x, taps, interpolation: int = 1) -> np.ndarray:
    """Causal FIR filtering; with ``interpolation`` I the input is zero
    stuffed to I times its rate first. Output length is ``I * len(x)``."""
    x = np.asarray(x)
    if interpolation > 1:
        x = upsample(x, interpolation)
    return FirFilter(taps).process(x)


class FirFilter:
    def __init__(self, taps):
        self.taps = _coeffs(taps)
        self._hist = np.zeros(len(self.taps) - 1)

    def process(self, x: np.ndarray) -> np.ndarray:
        if len(x) == 0:
            return np.zeros(0, dtype=np.result_type(x, self.taps))
        buf = np.concatenate([self._hist, x])
        if len(self.taps) > 1:
            self._hist = buf[-(len(self.taps) - 1):]
        if len(self.taps) > 128 and len(x) > 4 * len(self.taps):
            return signal.oaconvolve(buf, self.taps, mode="valid")
        return np.convolve(buf, self.taps, mode="valid")


class InterpFirFilter:
    def __init__(self, taps, interpolation: int):
        self.interpolation = int(interpolation)
        self._fir = FirFilter(taps)

    def process(self, x: np.ndarray) -> np.ndarray:
        return self._fir.process(upsample(x, self.interpolation))


class MovingAverage:
    def __init__(self, window: int):
        if window < 1:
            raise ValueError("window must be >= 1")
        self.window = int(window)
        self._hist = np.zeros(self.window - 1)

    def process(self, x: np.ndarray) -> np.ndarray:
        if len(x) == 0:
            return np.zeros(0, dtype=np.result_type(x, np.float64))
        n = self.window
        buf = np.concatenate([self._hist, x])
        if n > 1:
            self._hist = buf[-(n - 1):]
        cs = np.concatenate([[0], np.cumsum(buf)])
        return (cs[n:] - cs[:-n]) / n


def moving_average(x, window: int) -> np.ndarray:
    return MovingAverage(window).process(np.asarray(x))


class CorrelatorNormalize:
    """|c|^2 divided by its local moving average: a gain-free detection metric."""

    def __init__(self, window: int, eps: float = EPS):
        self._ma = MovingAverage(window)
        self.eps = eps

    def process(self, c: np.ndarray) -> np.ndarray:
        p = np.abs(c) ** 2
        return p / (self.eps + self._ma.process(p))


def correlator_normalize(matched_out, window: int) -> np.ndarray:
    return CorrelatorNormalize(window).process(np.asarray(matched_out))


class QuadratureDemod:
    def __init__(self, gain: float):
        if gain == 0:
            raise ValueError("gain must be nonzero")
        self.gain = float(gain)
        self._last = None

    def process(self, x: np.ndarray) -> np.ndarray:
        if len(x) == 0:
            return np.zeros(0)
        prev = np.empty_like(x)
        prev[0] = x[0] if self._last is None else self._last
        prev[1:] = x[:-1]
        self._last = x[-1]
        return self.gain * np.angle(x * np.conj(prev))


def quadrature_demod(x, gain: float = 1.0) -> np.ndarray:
    return QuadratureDemod(gain).process(np.asarray(x, dtype=np.complex128))


class WindowedVariance:
    """Population variance of the last ``window`` items (zeros before start)."""

    def __init__(self, window: int):
        if window < 2:
            raise ValueError("window must be >= 2")
        self.window = int(window)
        self._hist = np.zeros(self.window - 1)

    def process(self, x: np.ndarray) -> np.ndarray:
        if len(x) == 0:
            return np.zeros(0)
        n = self.window
        buf = np.concatenate([self._hist, np.asarray(x, dtype=np.float64)])
        self._hist = buf[-(n - 1):]
        centre = buf.mean()
        d = buf - centre
        s1 = np.concatenate([[0], np.cumsum(d)])
        s2 = np.concatenate([[0], np.cumsum(d * d)])
        m1 = (s1[n:] - s1[:-n]) / n
        m2 = (s2[n:] - s2[:-n]) / n
        return np.maximum(m2 - m1 * m1, 0.0)


def windowed_variance(x, window: int) -> np.ndarray:
    return WindowedVariance(window).process(np.asarray(x, dtype=np.float64))


class Vco:
    def __init__(self, sensitivity: float):
        if not np.isfinite(sensitivity):
            raise ValueError("sensitivity must be finite")
        self.sensitivity = float(sensitivity)
        self.phase = 0.0

    def process(self, deviation: np.ndarray) -> np.ndarray:
        if len(deviation) == 0:
            return np.zeros(0, dtype=np.complex128)
        phi = self.phase + np.cumsum(self.sensitivity * np.asarray(deviation, dtype=np.float64))
        self.phase = float(np.mod(phi[-1], 2 * np.pi))
        return np.exp(1j * phi)


def vco(deviation, sensitivity: float) -> np.ndarray:
    return Vco(sensitivity).process(np.asarray(deviation))


@dataclass(frozen=True)
class ChannelParams:
    noise_voltage: float = 0.0
    cfo: float = 0.0
    phase0: float = 0.0
    integer_delay: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.noise_voltage < 0:
            raise ValueError("noise_voltage must be >= 0")
        if abs(self.cfo) >= 0.5:
            raise ValueError("|cfo| must be < 0.5 cycles/sample")
        if self.integer_delay < 0:
            raise ValueError("integer_delay must be >= 0")


class Channel:
    """AWGN + carrier offset + integer delay, seeded."""

    def __init__(self, params: ChannelParams):
        self.params = params
        self._rng = np.random.default_rng(params.seed)
        self._delay = np.zeros(params.integer_delay, dtype=np.complex128)
        self._n = 0

    def process(self, x: np.ndarray) -> np.ndarray:
        p = self.params
        x = np.asarray(x, dtype=np.complex128)
        if p.integer_delay:
            buf = np.concatenate([self._delay, x])
            self._delay = buf[len(x):]
            x = buf[: len(x)]
        n = self._n + np.arange(len(x))
        self._n += len(x)
        y = x
        if p.cfo or p.phase0:
            y = x * np.exp(1j * (2 * np.pi * p.cfo * n + p.phase0))
        if p.noise_voltage > 0:
            # interleaved draws keep the noise independent of chunking
            w = self._rng.standard_normal(2 * len(x))
            y = y + p.noise_voltage * (w[0::2] + 1j * w[1::2])
        return y


def channel(x, params: ChannelParams) -> np.ndarray:
    return Channel(params).process(np.asarray(x))


class CfoHopper:
    """Phase-continuous frequency offset redrawn uniformly from
    ``[-spread, spread]`` every ``hop`` samples. Aligning ``hop`` with the
    burst slot gives every burst its own constant offset."""

    def __init__(self, spread: float, hop: int, seed: int = 0):
        if not 0 <= spread < 0.5:
            raise ValueError("spread must be in [0, 0.5)")
        if hop < 1:
            raise ValueError("hop must be >= 1")
        self.spread = float(spread)
        self.hop = int(hop)
        self._rng = np.random.default_rng(seed)
        self._n = 0
        self._phase = 0.0
        self.history: list[float] = []

    def _cfo_at(self, seg: int) -> float:
        while len(self.history) <= seg:
            self.history.append(float(self._rng.uniform(-self.spread, self.spread)))
        return self.history[seg]

    def process(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.complex128)
        f = np.empty(len(x))
        n = self._n + np.arange(len(x))
        for seg in np.unique(n // self.hop):
            f[n // self.hop == seg] = self._cfo_at(int(seg))
        phi = self._phase + 2 * np.pi * np.cumsum(f) - 2 * np.pi * f
        if len(x):
            self._phase = float(np.mod(phi[-1] + 2 * np.pi * f[-1], 2 * np.pi))
        self._n += len(x)
        return x * np.exp(1j * phi)


def power_envelope(x, window: int) -> np.ndarray:
    return moving_average(np.abs(np.asarray(x)) ** 2, window)


def matched_filter_taps(reference) -> np.ndarray:
    """Taps whose output peaks when ``reference`` has just fully arrived."""
    return np.conj(np.asarray(reference)[::-1])


# -- blocks ----------------------------------------------------------------

class FirBlock(SyncBlock):
    def __init__(self, taps, kind: str = "complex", name=None):
        super().__init__([kind], kind, name or "fir_filter")
        self.kernel = FirFilter(taps)

    def process(self, x):
        return self.kernel.process(x)


class InterpFirBlock(Block):
    """Zero-stuff by ``interpolation`` and filter. Stream tags are not
    carried across the rate change."""

    def __init__(self, taps, interpolation: int, kind: str = "complex", name=None):
        super().__init__(name or "interp_fir_filter")
        self.add_input(kind)
        self.add_output(kind)
        self.interpolation = int(interpolation)
        self.kernel = InterpFirFilter(taps, interpolation)

    def work(self, io):
        n = min(len(io.inputs[0]), io.space // self.interpolation)
        if n <= 0:
            return
        io.produce(0, self.kernel.process(io.inputs[0][:n]))
        io.consume(0, n)


def moving_average_block(window: int, name=None) -> FunctionBlock:
    return FunctionBlock(MovingAverage(window).process, "float", "float", name or "moving_average")


def correlator_normalize_block(window: int, name=None) -> FunctionBlock:
    return FunctionBlock(CorrelatorNormalize(window).process, "complex", "float", name or "correlator_normalize")


def quadrature_demod_block(gain: float, name=None) -> FunctionBlock:
    return FunctionBlock(QuadratureDemod(gain).process, "complex", "float", name or "quadrature_demod")


def windowed_variance_block(window: int, name=None) -> FunctionBlock:
    return FunctionBlock(WindowedVariance(window).process, "float", "float", name or "windowed_variance")


def power_envelope_block(window: int, name=None) -> FunctionBlock:
    ma = MovingAverage(window)
    return FunctionBlock(lambda x: ma.process(np.abs(x) ** 2), "complex", "float", name or "power_envelope")


def channel_block(params: ChannelParams, name=None) -> FunctionBlock:
    return FunctionBlock(Channel(params).process, "complex", "complex", name or "channel")


class SegmentedCorrelator:
    """Matched filter for ``reference`` split into ``segments`` pieces whose
    outputs are combined non-coherently: ``sqrt(sum |c_s|^2)``. With one
    segment this is the magnitude of a plain matched filter; more segments
    trade a little noise for tolerance to frequency offset."""

    def __init__(self, reference, segments: int = 1):
        ref = np.asarray(reference, dtype=np.complex128)
        if segments < 1:
            raise ValueError("segments must be >= 1")
        nz = np.flatnonzero(ref)
        self.filters = []
        for idx in np.array_split(nz, min(segments, len(nz))):
            part = np.zeros_like(ref)
            part[idx] = ref[idx]
            self.filters.append(FirFilter(matched_filter_taps(part)))

    def process(self, x: np.ndarray) -> np.ndarray:
        acc = np.zeros(len(x))
        for f in self.filters:
            acc += np.abs(f.process(x)) ** 2
        return np.sqrt(acc).astype(np.complex128)


def segmented_correlator_block(reference, segments: int = 1, name=None) -> FunctionBlock:
    return FunctionBlock(SegmentedCorrelator(reference, segments).process, "complex", "complex",
                         name or "preamble_correlator")


def cfo_hopper_block(spread: float, hop: int, seed: int = 0, name=None) -> FunctionBlock:
    return FunctionBlock(CfoHopper(spread, hop, seed).process, "complex", "complex", name or "cfo_hopper")


class GatedVco(SyncBlock):
    """VCO that only emits carrier inside bursts.

    Burst extents come from ``burst_len`` stream tags (as attached by
    :class:`~burstlink.eventstream.EsSource`); outside them the output is
    exactly zero.
    """

    def __init__(self, sensitivity: float, name=None):
        super().__init__(["float"], "complex", name or "vco")
        self.kernel = Vco(sensitivity)
        self._burst_end = 0

    def work(self, io):
        n = min(len(io.inputs[0]), io.space)
        if n <= 0:
            return
        x = io.inputs[0][:n]
        off = io.offsets[0]
        gate = np.zeros(n, dtype=bool)
        if self._burst_end > off:
            gate[: self._burst_end - off] = True
        for t in io.tags[0]:
            if t.key == "burst_len" and t.offset < off + n:
                a = t.offset - off
                gate[a:a + int(t.value)] = True
                self._burst_end = max(self._burst_end, t.offset + int(t.value))
        y = np.zeros(n, dtype=np.complex128)
        if gate.any():
            y[gate] = self.kernel.process(x[gate])
        io.produce(0, y, [t for t in io.tags[0] if t.offset < off + n])
        io.consume(0, n)


class SquelchedMetric(SyncBlock):
    """Passes a detection metric through where the input power envelope is at
    or above ``level`` and substitutes ``fill`` where it is not. Two inputs:
    metric (float) and power envelope (float)."""

    def __init__(self, level: float, fill: float, name=None):
        super().__init__(["float", "float"], "float", name or "squelch")
        self.level = float(level)
        self.fill = float(fill)

    def process(self, metric, power):
        return np.where(power >= self.level, metric, self.fill)


class Throttle(SyncBlock):
    """Paces the stream to ``rate`` items per wall-clock second."""

    def __init__(self, kind: str, rate: float, name=None):
        super().__init__([kind], kind, name or "throttle")
        self.rate = float(rate)
        self._t0 = None
        self._count = 0

    def process(self, x):
        if self._t0 is None:
            self._t0 = time.monotonic()
        self._count += len(x)
        wait = self._t0 + self._count / self.rate - time.monotonic()
        if wait > 0:
            time.sleep(wait)
        return x
