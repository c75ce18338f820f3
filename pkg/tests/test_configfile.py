import numpy as np
import pytest

from burstlink.configfile import config_hash, load_config, parse_config
from burstlink.dsp import ChannelParams
from burstlink.errors import ConfigError
from burstlink.phy.config import BurstConfig

TEXT = """
# short slots for the PSK link
sps = 4
psk.slot_len = 512   # trailing comment
fsk.slot_len = 4096
fec = repetition-2
fec_k = 64
channel.noise_voltage = 0.05
channel.cfo_spread = 0.01
"""


def test_sections_resolve_per_modem():
    lc = parse_config(TEXT)
    psk, fsk = lc.burst_config("psk"), lc.burst_config("fsk")
    assert psk.sps == fsk.sps == 4
    assert psk.slot_len == 512 and fsk.slot_len == 4096
    assert psk.fec == "repetition-2" and psk.fec_n == 128
    assert lc.channel_values() == {"noise_voltage": 0.05, "cfo_spread": 0.01}


def test_later_lines_win_and_overrides_apply():
    lc = parse_config("sps = 2\nsps = 4\n")
    assert lc.burst_config("psk").sps == 4
    assert lc.burst_config("psk", sps=2).sps == 2


@pytest.mark.parametrize("text,where", [
    ("bogus = 1", ":1:"),
    ("\n\npsk.bogus = 1", ":3:"),
    ("qam.sps = 2", ":1:"),
    ("channel.fading = 1", ":1:"),
    ("just a line", ":1:"),
    ("sps = two", None),
])
def test_errors_name_the_line(text, where):
    with pytest.raises(ConfigError) as info:
        parse_config(text, "cfg.txt")
    if where:
        assert "cfg.txt" + where in str(info.value)


def test_value_types():
    lc = parse_config("fsk_randomize = yes\nmax_burst_samples = none\nrrc_beta = 0.5\nslot_len = 0x200")
    c = lc.burst_config("psk")
    assert c.fsk_randomize is True and c.max_burst_samples is None
    assert c.rrc_beta == 0.5 and c.slot_len == 512


@pytest.mark.parametrize("text,bits", [("0xA5", "10100101"), ("11001010", "11001010"), ("1100_1010", "11001010")])
def test_preamble_bits(text, bits):
    c = parse_config(f"preamble_bits = {text}").burst_config("psk")
    np.testing.assert_array_equal(c.preamble_bits, [int(b) for b in bits])


def test_invalid_combination_is_config_error():
    with pytest.raises(ConfigError):
        parse_config("sps = 3").burst_config("psk")  # even tap count


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.cfg")


def test_load_from_file(tmp_path):
    p = tmp_path / "a.cfg"
    p.write_text(TEXT)
    assert load_config(p).burst_config("fsk").slot_len == 4096


def test_config_hash_stable_and_sensitive():
    a = config_hash(BurstConfig(), ChannelParams(), modem="psk")
    assert a == config_hash(BurstConfig(), ChannelParams(), modem="psk")
    assert len(a) == 16
    assert a != config_hash(BurstConfig(sps=4), ChannelParams(), modem="psk")
    assert a != config_hash(BurstConfig(), ChannelParams(noise_voltage=0.1), modem="psk")
    assert a != config_hash(BurstConfig(), ChannelParams(), modem="fsk")
