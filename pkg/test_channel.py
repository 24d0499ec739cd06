import math

import numpy as np
import pytest
from scipy import stats
from scipy.special import j0

from channel import (
    ChannelError,
    FadingField,
    GeometryError,
    LinkChannel,
    PathLossLaw,
    SinrSegment,
    SinrTrace,
    decoded_bits,
    evolve_fading,
    instantaneous_capacity,
    jakes_correlation,
    mean_rx_power,
    sinr,
)


def test_mean_rx_power_unity_reference():
    law = PathLossLaw(tx_power_mw=10.0, exponent=3.5)
    assert mean_rx_power(law, 60.0) == pytest.approx(5.977e-6, rel=1e-3)
    np.testing.assert_allclose(mean_rx_power(law, np.array([1.0, 2.0])), [10.0, 10.0 * 2.0 ** -3.5])


def test_mean_rx_power_with_reference_loss():
    law = PathLossLaw(tx_power_mw=10.0, exponent=3.5, reference_loss_db=40.0)
    assert mean_rx_power(law, 1.0) == pytest.approx(1e-3)


def test_zero_distance_is_rejected():
    law = PathLossLaw(tx_power_mw=10.0, exponent=3.5)
    with pytest.raises(GeometryError):
        mean_rx_power(law, 0.0)


def test_path_loss_law_validation():
    with pytest.raises(ValueError):
        PathLossLaw(tx_power_mw=0.0, exponent=3.5)
    with pytest.raises(ValueError):
        PathLossLaw(tx_power_mw=1.0, exponent=2.0)


def test_jakes_correlation():
    assert jakes_correlation(0.0, 11.1) == 1.0
    assert jakes_correlation(0.01, 11.1) == pytest.approx(j0(2 * math.pi * 11.1 * 0.01))
    with pytest.raises(ValueError):
        jakes_correlation(-1.0, 11.1)


def test_zero_lag_leaves_channel_unchanged():
    rng = np.random.default_rng(0)
    channel = LinkChannel.fresh((0, 1), 11.1, rng, start=1.0)
    before = channel.fading_gain
    evolve_fading(channel, 1.0, rng)
    assert channel.fading_gain == before


def test_channel_refuses_to_move_back_in_time():
    rng = np.random.default_rng(0)
    channel = LinkChannel.fresh((0, 1), 11.1, rng, start=2.0)
    with pytest.raises(ChannelError):
        evolve_fading(channel, 1.0, rng)


def test_fading_marginal_is_unit_exponential():
    rng = np.random.default_rng(42)
    gains = []
    for index in range(4000):
        channel = LinkChannel.fresh((index, index + 1), 11.1, rng)
        evolve_fading(channel, 0.013, rng)
        gains.append(channel.fading_gain)
    assert stats.kstest(gains, "expon").pvalue > 1e-3


def test_fading_autocorrelation_follows_bessel():
    rng = np.random.default_rng(7)
    lag = 0.02
    n = 20000
    product = power = 0.0
    for index in range(n):
        channel = LinkChannel.fresh((0, index), 11.1, rng)
        re0, im0 = channel.gain_re, channel.gain_im
        evolve_fading(channel, lag, rng)
        product += re0 * channel.gain_re + im0 * channel.gain_im
        power += re0 * re0 + im0 * im0
    assert product / power == pytest.approx(j0(2 * math.pi * 11.1 * lag), abs=0.02)


def test_sinr_and_capacity():
    sample = sinr(4e-9, [1e-9, 1e-9], 2e-9)
    assert sample.value == pytest.approx(1.0)
    assert instantaneous_capacity(1.0, 1e6) == pytest.approx(1e6)
    assert instantaneous_capacity(3.0, 1e6) == pytest.approx(2e6)
    with pytest.raises(ValueError):
        sinr(1.0, [], 0.0)


def test_decoded_bits_integrates_piecewise_constant_capacity():
    segments = [SinrSegment(0.0, 1e-3, 1.0), SinrSegment(1e-3, 3e-3, 3.0), SinrSegment(3e-3, 4e-3, 0.0)]
    assert decoded_bits(segments, 1e6, start=0.0, end=4e-3) == pytest.approx(1e3 + 4e3)


def test_decoded_bits_rejects_gaps_and_short_traces():
    with pytest.raises(ChannelError):
        decoded_bits([SinrSegment(0.0, 1e-3, 1.0), SinrSegment(2e-3, 3e-3, 1.0)], 1e6)
    with pytest.raises(ChannelError):
        decoded_bits([SinrSegment(0.0, 1e-3, 1.0)], 1e6, start=0.0, end=2e-3)
    with pytest.raises(ChannelError):
        decoded_bits([], 1e6, start=0.0, end=1e-3)
    assert decoded_bits([], 1e6) == 0.0


def test_sinr_trace_accumulates_segments():
    trace = SinrTrace(start=0.0, gamma=1.0)
    trace.advance(1e-3, gamma=3.0)
    trace.advance(2e-3)
    trace.advance(2e-3, gamma=0.0)
    trace.advance(5e-3)
    assert trace.end == pytest.approx(5e-3)
    assert trace.bits(1e6) == pytest.approx(1e3 + 2e3)
    with pytest.raises(ChannelError):
        trace.advance(1e-3)


def test_fading_field_marginal_and_pair_independence():
    field = FadingField(80, 11.1, np.random.default_rng(3))
    field.evolve_rows(range(80), 0.0)
    field.evolve_rows(range(80), 0.5)
    gains = field.row_gains(range(80))
    off_diagonal = gains[~np.eye(80, dtype=bool)]
    assert stats.kstest(off_diagonal, "expon").pvalue > 1e-3
    assert field.gain(2, 5) != field.gain(5, 2)


def test_fading_field_duplicate_pairs_evolve_once():
    field = FadingField(3, 0.0, np.random.default_rng(1))
    field.evolve([0, 0], [1, 1], 0.0)
    first = field.gain(0, 1)
    # Zero Doppler: later updates keep the realisation.
    field.evolve([0], [1], 1.0)
    assert field.gain(0, 1) == pytest.approx(first)


def test_fading_field_refuses_to_move_back_in_time():
    field = FadingField(3, 11.1, np.random.default_rng(1))
    field.evolve([0], [1], 1.0)
    with pytest.raises(ChannelError):
        field.evolve([0], [1], 0.5)


def test_pinned_gain_survives_a_static_channel():
    field = FadingField(3, 0.0, np.random.default_rng(2))
    field.set_gain(0, 2, 0.25)
    field.evolve_rows([0], 5.0)
    assert field.gain(0, 2) == pytest.approx(0.25)
    assert field.gain(2, 0) != pytest.approx(0.25)
    with pytest.raises(ChannelError):
        field.set_gain(0, 1, -1.0)
