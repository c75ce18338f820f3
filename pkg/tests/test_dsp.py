import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import signal

from burstlink.dsp import (
    CfoHopper,
    Channel,
    ChannelParams,
    CorrelatorNormalize,
    FirFilter,
    FirTaps,
    GatedVco,
    InterpFirFilter,
    MovingAverage,
    QuadratureDemod,
    SegmentedCorrelator,
    Vco,
    WindowedVariance,
    channel,
    correlator_normalize,
    design_rrc,
    fir_filter,
    moving_average,
    power_envelope,
    quadrature_demod,
    vco,
    windowed_variance,
)
from burstlink.runtime import Flowgraph, StreamTag, VectorSink, VectorSource


def raised_cosine(t, beta):
    """Analytic raised-cosine pulse (t in symbol periods)."""
    t = np.asarray(t, dtype=float)
    den = 1 - (2 * beta * t) ** 2
    sing = np.abs(den) < 1e-10
    out = np.sinc(t) * np.cos(np.pi * beta * t) / np.where(sing, 1, den)
    out[sing] = np.pi / 4 * np.sinc(1 / (2 * beta))
    return out


def cascade_isi(sps, beta, span):
    h = design_rrc(sps, beta, span).coefficients
    p = np.convolve(h, h)
    c = len(p) // 2
    idx = np.r_[c - sps * (c // sps):len(p):sps]
    side = idx[idx != c]
    return np.max(np.abs(p[side])) / p[c]


rrc_params = st.tuples(st.sampled_from([1, 2, 4, 8]), st.floats(0.05, 1.0), st.integers(2, 40)).filter(
    lambda a: (a[0] * a[2]) % 2 == 0
)


# -- RRC ---------------------------------------------------------------------

@settings(max_examples=200)
@given(rrc_params)
def test_rrc_symmetric_and_unit_energy(params):
    sps, beta, span = params
    h = design_rrc(sps, beta, span).coefficients
    assert len(h) == sps * span + 1
    np.testing.assert_allclose(h, h[::-1], atol=1e-15)
    assert abs(np.sum(h ** 2) - 1) <= 1e-12


def test_rrc_rejects_bad_parameters():
    with pytest.raises(ValueError):
        design_rrc(2, 0.0, 11)
    with pytest.raises(ValueError):
        design_rrc(2, 0.35, 1)
    with pytest.raises(ValueError):
        design_rrc(1, 0.35, 11)  # even tap count


def test_rrc_cascade_matches_raised_cosine():
    sps, beta = 8, 0.35
    h = design_rrc(sps, beta, 61).coefficients
    p = np.convolve(h, h)
    c = len(p) // 2
    t = (np.arange(len(p)) - c) / sps
    ref = raised_cosine(t, beta)
    mid = np.abs(t) <= 8
    np.testing.assert_allclose(p[mid] / p[c], ref[mid], atol=2e-3)


@pytest.mark.xfail(strict=True, reason="truncation at 11 symbols leaves ~3.3e-3 residual ISI")
def test_rrc_isi_span_11():
    assert cascade_isi(2, 0.35, 11) <= 1e-3


@pytest.mark.parametrize("sps", [2, 4, 8])
def test_rrc_isi_long_span(sps):
    assert cascade_isi(sps, 0.35, 31) <= 1e-3


def test_rrc_isi_span_11_value():
    # frozen from the convolution oracle above
    assert cascade_isi(2, 0.35, 11) == pytest.approx(3.3e-3, rel=0.05)


# -- FIR -----------------------------------------------------------------------

def test_fir_identity():
    x = np.random.default_rng(0).standard_normal(50)
    np.testing.assert_array_equal(fir_filter(x, [1.0]), x)


def test_fir_impulse_gives_taps():
    taps = np.array([0.5, -1.0, 2.0, 0.25])
    x = np.zeros(10)
    x[0] = 1
    np.testing.assert_array_equal(fir_filter(x, taps)[:4], taps)


def test_fir_dc_gain():
    taps = np.array([0.1, 0.7, 0.4, -0.2])
    y = fir_filter(np.full(20, 3.0), taps)
    assert y[-1] == pytest.approx(3.0 * taps.sum(), abs=1e-12)


def test_fir_matches_lfilter_and_chunking(rng):
    taps = rng.standard_normal(300)
    x = rng.standard_normal(5000) + 1j * rng.standard_normal(5000)
    ref = signal.lfilter(taps, 1, x)
    f = FirFilter(taps)
    got = np.concatenate([f.process(x[a:a + 731]) for a in range(0, 5000, 731)])
    np.testing.assert_allclose(got, ref, atol=1e-9)


def test_interpolating_fir_is_polyphase_equivalent(rng):
    taps = design_rrc(4, 0.35, 11)
    x = rng.standard_normal(64)
    up = np.zeros(256)
    up[::4] = x
    np.testing.assert_allclose(fir_filter(x, taps, interpolation=4), signal.lfilter(taps.coefficients, 1, up),
                               atol=1e-12)
    f = InterpFirFilter(taps, 4)
    chunked = np.concatenate([f.process(x[:10]), f.process(x[10:])])
    np.testing.assert_allclose(chunked, fir_filter(x, taps, 4), atol=1e-12)


@settings(max_examples=100)
@given(seed=st.integers(0, 2**32 - 1), a=st.floats(-100, 100), b=st.floats(-100, 100), n=st.integers(1, 400))
def test_fir_linearity(seed, a, b, n):
    rng = np.random.default_rng(seed)
    taps = rng.standard_normal(rng.integers(1, 60))
    x, y = rng.standard_normal(n), rng.standard_normal(n)
    lhs = fir_filter(a * x + b * y, taps)
    rhs = a * fir_filter(x, taps) + b * fir_filter(y, taps)
    scale = max(1.0, np.max(np.abs(lhs)))
    assert np.max(np.abs(lhs - rhs)) <= 1e-9 * scale


def test_firtaps_validation():
    with pytest.raises(ValueError):
        FirTaps(np.array([]))
    with pytest.raises(ValueError):
        FirTaps(np.array([1.0, np.inf]))


# -- moving average ------------------------------------------------------------

def test_moving_average_examples():
    assert moving_average(np.full(30, 2.5), 8)[-1] == pytest.approx(2.5)
    x = np.zeros(12)
    x[0] = 1
    np.testing.assert_allclose(moving_average(x, 4), [0.25] * 4 + [0] * 8, atol=1e-15)
    x = np.arange(7.0)
    np.testing.assert_array_equal(moving_average(x, 1), x)


@settings(max_examples=100)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 3000), window=st.integers(1, 300),
       cut=st.integers(0, 3000))
def test_moving_average_matches_definition_and_chunks(seed, n, window, cut):
    x = np.random.default_rng(seed).standard_normal(n)
    ref = np.convolve(x, np.ones(window) / window)[:n]
    m = MovingAverage(window)
    cut = min(cut, n)
    got = np.concatenate([m.process(x[:cut]), m.process(x[cut:])])
    np.testing.assert_allclose(got, ref, atol=1e-9)


# -- correlator normalize ---------------------------------------------------------

def _spiky_noise(rng):
    x = rng.standard_normal(4000) + 1j * rng.standard_normal(4000)
    x[2000] *= 30
    return x


@pytest.mark.parametrize("g", [
    pytest.param(1e-3, marks=pytest.mark.xfail(
        strict=True, reason="the fixed 1e-12 floor is ~5e-7 of the local power at this scale")),
    1.0,
    1e3,
])
def test_normalize_scale_invariance(g, rng):
    x = _spiky_noise(rng)
    np.testing.assert_allclose(correlator_normalize(g * x, 64), correlator_normalize(x, 64), rtol=1e-9)


@pytest.mark.parametrize("g", [1e-3, 1.0, 1e3])
def test_normalize_argmax_scale_invariant(g, rng):
    x = _spiky_noise(rng)
    got = correlator_normalize(g * x, 64)
    assert np.argmax(got[64:]) + 64 == 2000


@pytest.mark.parametrize("g", [1e-3, 1.0, 1e3])
def test_normalize_matches_floor_oracle(g, rng):
    x = g * _spiky_noise(rng)
    p = np.abs(x) ** 2
    avg = np.convolve(p, np.ones(64) / 64)[: len(p)]
    np.testing.assert_allclose(correlator_normalize(x, 64), p / (1e-12 + avg), rtol=1e-9)


def test_normalize_noise_mean_near_one(rng):
    x = rng.standard_normal(200_000) + 1j * rng.standard_normal(200_000)
    m = correlator_normalize(x, 256)[256:]
    assert abs(np.mean(m) - 1) <= 0.1


def test_normalize_spike_oracle():
    mu, p, n = 0.5, 80.0, 32
    x = np.full(500, np.sqrt(mu), dtype=complex)
    x[300] = np.sqrt(p)
    m = correlator_normalize(x, n)
    assert m[300] == pytest.approx(p / (1e-12 + ((n - 1) * mu + p) / n), rel=1e-12)
    assert m[200] == pytest.approx(1.0, rel=1e-9)


def test_normalize_all_zero_is_finite():
    assert np.all(correlator_normalize(np.zeros(100, complex), 16) == 0)


def test_normalize_chunked(rng):
    x = rng.standard_normal(1000) + 0j
    k = CorrelatorNormalize(50)
    got = np.concatenate([k.process(x[:333]), k.process(x[333:])])
    np.testing.assert_allclose(got, correlator_normalize(x, 50), rtol=1e-12)


# -- quadrature demod --------------------------------------------------------------

def test_quad_demod_tone():
    n = np.arange(200)
    y = quadrature_demod(np.exp(2j * np.pi * 0.1 * n), 1.0)
    assert y[0] == 0
    np.testing.assert_allclose(y[1:], 2 * np.pi * 0.1, atol=1e-9)
    np.testing.assert_allclose(quadrature_demod(np.exp(-2j * np.pi * 0.1 * n), 1.0), -y, atol=1e-9)


def test_quad_demod_constant():
    assert np.all(quadrature_demod(np.full(50, 1 + 1j), 3.0) == 0)


def test_quad_demod_chunk_boundary():
    n = np.arange(100)
    x = np.exp(2j * np.pi * 0.05 * n)
    q = QuadratureDemod(1.0)
    got = np.concatenate([q.process(x[:37]), q.process(x[37:])])
    np.testing.assert_allclose(got, quadrature_demod(x, 1.0), atol=1e-12)


# -- windowed variance -------------------------------------------------------------

def test_variance_constant_is_zero():
    assert np.allclose(windowed_variance(np.full(100, 4.2), 10)[10:], 0, atol=1e-12)


def test_variance_alternating_population():
    a = 1.7
    x = a * (-1.0) ** np.arange(200)
    np.testing.assert_allclose(windowed_variance(x, 16)[16:], a * a, rtol=1e-12)


def test_variance_chunked(rng):
    x = rng.standard_normal(3000)
    ref = windowed_variance(x, 64)
    k = WindowedVariance(64)
    got = np.concatenate([k.process(x[a:a + 500]) for a in range(0, 3000, 500)])
    np.testing.assert_allclose(got, ref, atol=1e-9)
    # against a direct population variance
    assert got[1000] == pytest.approx(np.var(x[937:1001]), abs=1e-9)


def test_variance_noise_vs_tone_ratio(rng):
    n, sigma = 100_000, np.sqrt(0.1 / 2)  # 10 dB SNR, unit tone
    w = sigma * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    tone = np.exp(2j * np.pi * 0.05 * np.arange(n)) + w
    noise = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    v_tone = np.mean(windowed_variance(quadrature_demod(tone, 1.0), 64)[64:])
    v_noise = np.mean(windowed_variance(quadrature_demod(noise, 1.0), 64)[64:])
    assert v_noise / v_tone > 10


# -- vco ----------------------------------------------------------------------------

def test_vco_tone():
    y = vco(np.ones(100), 2 * np.pi * 0.1)
    np.testing.assert_allclose(y, np.exp(2j * np.pi * 0.1 * np.arange(1, 101)), atol=1e-9)
    np.testing.assert_allclose(np.angle(y[1:] * np.conj(y[:-1])), 2 * np.pi * 0.1, atol=1e-12)


def test_vco_zero_deviation():
    np.testing.assert_array_equal(vco(np.zeros(10), 1.3), np.ones(10))


@settings(max_examples=200)
@given(seed=st.integers(0, 2**32 - 1), sens=st.floats(0.01, 3.0), n=st.integers(2, 2000))
def test_vco_demod_inversion(seed, sens, n):
    d = np.random.default_rng(seed).uniform(-1, 1, n) * 0.99 * np.pi / sens
    y = quadrature_demod(vco(d, sens), 1 / sens)
    np.testing.assert_allclose(y[1:], d[1:], atol=1e-9)


def test_vco_chunked():
    d = np.linspace(-1, 1, 100)
    v = Vco(0.5)
    np.testing.assert_allclose(np.concatenate([v.process(d[:40]), v.process(d[40:])]), vco(d, 0.5), atol=1e-12)


def test_gated_vco_zero_outside_bursts():
    d = np.ones(100)
    g = Flowgraph()
    src = VectorSource(d, "float", tags=[StreamTag(10, "burst_len", 20), StreamTag(60, "burst_len", 5)], chunk=16)
    gv, sink = GatedVco(0.3), VectorSink("complex")
    g.connect(src, gv)
    g.connect(gv, sink)
    g.run()
    y = sink.data
    on = np.zeros(100, bool)
    on[10:30] = on[60:65] = True
    assert np.all(y[~on] == 0)
    np.testing.assert_allclose(np.abs(y[on]), 1)


# -- channel ----------------------------------------------------------------------------

def test_channel_identity(rng):
    x = rng.standard_normal(100) + 1j * rng.standard_normal(100)
    np.testing.assert_array_equal(channel(x, ChannelParams()), x)


def test_channel_cfo():
    x = np.ones(64, complex)
    y = channel(x, ChannelParams(cfo=0.013))
    np.testing.assert_allclose(y, np.exp(2j * np.pi * 0.013 * np.arange(64)), atol=1e-12)


def test_channel_delay_and_phase(rng):
    x = rng.standard_normal(50) + 0j
    y = channel(x, ChannelParams(integer_delay=7, phase0=0.4))
    np.testing.assert_allclose(y[7:], x[:-7] * np.exp(0.4j), atol=1e-12)
    assert np.all(y[:7] == 0)


def test_channel_noise_variance():
    sigma = 0.37
    y = channel(np.zeros(1_000_000, complex), ChannelParams(noise_voltage=sigma, seed=4))
    for comp in (y.real, y.imag):
        assert abs(np.var(comp) / sigma ** 2 - 1) <= 0.03


def test_channel_seeded_reproducible(rng):
    x = rng.standard_normal(5000) + 0j
    p = ChannelParams(noise_voltage=0.2, cfo=0.01, integer_delay=3, seed=9)
    a = Channel(p)
    chunked = np.concatenate([a.process(x[:1234]), a.process(x[1234:])])
    assert chunked.tobytes() == channel(x, p).tobytes()


def test_channel_param_validation():
    with pytest.raises(ValueError):
        ChannelParams(noise_voltage=-1)
    with pytest.raises(ValueError):
        ChannelParams(cfo=0.5)


def test_cfo_hopper_constant_per_hop_and_phase_continuous():
    hop = CfoHopper(0.02, 100, seed=3)
    y = np.concatenate([hop.process(np.ones(77, complex)) for _ in range(6)])
    f = np.angle(y[1:] * np.conj(y[:-1])) / (2 * np.pi)
    for seg in range(4):
        np.testing.assert_allclose(f[seg * 100:seg * 100 + 99], hop.history[seg], atol=1e-12)
    assert all(abs(c) <= 0.02 for c in hop.history)


# -- power envelope -----------------------------------------------------------------

def test_power_envelope_examples():
    np.testing.assert_allclose(power_envelope(1.5 * np.exp(1j * np.arange(100)), 8)[8:], 2.25)
    assert np.all(power_envelope(np.zeros(20, complex), 4) == 0)
    x = np.zeros(40, complex)
    x[10:] = 2.0
    p = power_envelope(x, 8)
    assert np.all(p[:10] == 0)
    np.testing.assert_allclose(p[10:18], 4.0 * np.arange(1, 9) / 8)
    np.testing.assert_allclose(p[18:], 4.0)


def test_segmented_correlator_single_segment_is_matched_filter(rng):
    ref = np.exp(1j * rng.uniform(0, 2 * np.pi, 64))
    x = rng.standard_normal(500) + 1j * rng.standard_normal(500)
    x[200:264] += ref
    got = SegmentedCorrelator(ref, 1).process(x)
    np.testing.assert_allclose(got.real, np.abs(fir_filter(x, np.conj(ref[::-1]))), atol=1e-9)
    assert np.argmax(got.real) == 263
