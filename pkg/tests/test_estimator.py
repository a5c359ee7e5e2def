import math
import random

import pytest

from thzbench.domain import ChannelState, Modulation, QosRequirements, RequestEnvelope, RequestKind
from thzbench.estimator import (
    DEFAULT_ABSORPTION,
    AbsorptionTable,
    LinkBudgetParams,
    ber_of,
    db_to_linear,
    derive_config,
    estimate,
    free_space_path_loss_db,
    noise_floor_dbm,
    path_loss_db,
    select_modulation,
    snr_db,
)
from thzbench.store import ConfigStore


def _qos(**kw):
    base = dict(bitrate_bps=1e9, ber_max=1e-6, bandwidth_hz=5e9)
    base.update(kw)
    return QosRequirements(**base)


def _state(**kw):
    base = dict(frequency_hz=300e9, distance_m=2.0, humidity_pct=40.0)
    base.update(kw)
    return ChannelState(**base)


class TestLinkBudget:
    def test_fspl_reference_points(self):
        # 50-digit evaluation of 20*log10(4*pi*d*f/c)
        assert free_space_path_loss_db(1.0, 300e9) == pytest.approx(81.990208316276622554, abs=1e-9)
        assert free_space_path_loss_db(2.0, 300e9) == pytest.approx(88.010808229556246458, abs=1e-9)

    def test_fspl_doubling_distance_adds_six_db(self):
        base = free_space_path_loss_db(1.0, 1e12)
        assert free_space_path_loss_db(2.0, 1e12) - base == pytest.approx(20.0 * math.log10(2.0), abs=1e-12)

    def test_noise_floor(self):
        # -174 + 10*log10(1e9) + 10 lands exactly on -74
        assert noise_floor_dbm(1e9, 10.0) == pytest.approx(-74.0, abs=1e-9)
        assert noise_floor_dbm(5e9, 10.0) == pytest.approx(-67.01029995663981, abs=1e-9)

    def test_absorption_default_humidity_split(self):
        assert DEFAULT_ABSORPTION.coeff_db_per_m(300e9, 40.0) == 0.5
        assert DEFAULT_ABSORPTION.coeff_db_per_m(300e9, 49.999) == 0.5
        assert DEFAULT_ABSORPTION.coeff_db_per_m(300e9, 50.0) == 2.0
        assert DEFAULT_ABSORPTION.coeff_db_per_m(300e9, 100.0) == 2.0

    def test_path_loss_adds_absorption_per_metre(self):
        fspl = free_space_path_loss_db(2.0, 300e9)
        assert path_loss_db(2.0, 300e9, 40.0) == pytest.approx(fspl + 1.0)
        assert path_loss_db(2.0, 300e9, 70.0) == pytest.approx(fspl + 4.0)

    def test_custom_absorption_table_banded(self):
        table = AbsorptionTable(rows=((1e12, 50.0, 0.3), (1e12, None, 1.0), (None, None, 5.0)))
        assert table.coeff_db_per_m(0.5e12, 20.0) == 0.3
        assert table.coeff_db_per_m(0.5e12, 80.0) == 1.0
        assert table.coeff_db_per_m(2e12, 20.0) == 5.0

    def test_absorption_table_json_roundtrip(self, tmp_path):
        p = tmp_path / "abs.json"
        p.write_text('{"rows": [[null, 50.0, 0.5], [null, null, 2.0]]}')
        assert AbsorptionTable.from_json_file(str(p)) == DEFAULT_ABSORPTION

    def test_snr_reference_point(self):
        # 10 + 25 + 25 - (88.0108... + 1.0) - (-67.0103...) with defaults
        assert snr_db(_qos(), _state()) == pytest.approx(37.999491727083565, abs=1e-9)

    def test_params_from_dict(self):
        p = LinkBudgetParams.from_dict({"tx_power_dbm": 5.0, "noise_figure_db": 7.0})
        assert p.tx_power_dbm == 5.0
        assert p.noise_figure_db == 7.0
        assert p.tx_gain_dbi == 25.0
        assert p.absorption == DEFAULT_ABSORPTION


class TestBer:
    # values frozen from a 50-digit erfc evaluation of the same expressions
    @pytest.mark.parametrize(
        "mod,snr_dbv,expected",
        [
            (Modulation.BPSK, 0.0, 0.078649603525142565),
            (Modulation.BPSK, 5.0, 0.0059538671477786595),
            (Modulation.BPSK, 10.0, 3.8721082155220418e-6),
            (Modulation.BPSK, 12.0, 9.0060103506287324e-9),
            (Modulation.QAM16, 30.0, 7.8318284391095428e-46),
            (Modulation.QAM64, 30.0, 1.5097568082887992e-12),
        ],
    )
    def test_frozen_points(self, mod, snr_dbv, expected):
        got = ber_of(mod, db_to_linear(snr_dbv))
        assert got == pytest.approx(expected, rel=1e-10)

    def test_qpsk_reduces_to_q_sqrt_gamma(self):
        from scipy.special import erfc

        for g in (0.5, 1.0, 4.0, 25.0):
            assert ber_of(Modulation.QPSK, g) == pytest.approx(0.5 * erfc(math.sqrt(g / 2.0)), rel=1e-12)

    def test_monotone_in_snr(self):
        rng = random.Random(0xBE12)
        for mod in Modulation:
            gammas = sorted(10 ** rng.uniform(-2, 6) for _ in range(400))
            bers = [ber_of(mod, g) for g in gammas]
            assert all(a >= b for a, b in zip(bers, bers[1:]))

    def test_order_penalty_at_fixed_snr(self):
        # denser constellations cannot do better; the nearest-neighbour
        # approximation only guarantees this where Q is well below 0.5, so
        # stay at snr >= 10 dB
        for g in (10.0, 100.0, 1000.0):
            assert ber_of(Modulation.BPSK, g) <= ber_of(Modulation.QPSK, g)
            assert ber_of(Modulation.QPSK, g) < ber_of(Modulation.QAM16, g)
            assert ber_of(Modulation.QAM16, g) < ber_of(Modulation.QAM64, g)

    def test_negative_snr_rejected(self):
        with pytest.raises(ValueError):
            ber_of(Modulation.BPSK, -1.0)


class TestSelection:
    # SNR thresholds for ber 1e-6 (50-digit bisection): BPSK 10.530, QPSK
    # 13.540, QAM16 20.422, QAM64 26.559 dB
    @pytest.mark.parametrize(
        "snr,expected",
        [
            (60.0, Modulation.QAM64),
            (27.0, Modulation.QAM64),
            (26.0, Modulation.QAM16),
            (21.0, Modulation.QAM16),
            (20.0, Modulation.QPSK),
            (14.0, Modulation.QPSK),
            (13.0, Modulation.BPSK),
            (11.0, Modulation.BPSK),
            (10.0, None),
            (-10.0, None),
        ],
    )
    def test_highest_feasible_order(self, snr, expected):
        assert select_modulation(snr, 1e-6) is expected

    def test_stricter_ber_lowers_order(self):
        assert select_modulation(28.0, 1e-6) is Modulation.QAM64
        assert select_modulation(28.0, 1e-9) is Modulation.QAM16

    def test_selected_modulation_meets_bound(self):
        rng = random.Random(0x5E1E)
        for _ in range(300):
            snr = rng.uniform(-5.0, 60.0)
            ber_max = 10 ** rng.uniform(-9, -2)
            mod = select_modulation(snr, ber_max)
            if mod is not None:
                assert ber_of(mod, db_to_linear(snr)) <= ber_max


class TestDeriveConfig:
    def test_clear_short_link(self):
        cfg = derive_config(_qos(), _state())
        assert cfg is not None
        assert cfg.modulation is Modulation.QAM64
        assert cfg.code_rate == 0.8
        assert cfg.predicted_ber <= 1e-6
        assert cfg.predicted_snr_db == pytest.approx(37.999491727083565, abs=1e-9)

    def test_humid_long_link_falls_back_to_bpsk(self):
        # d=8, humidity 70: snr 10.958 dB, only BPSK meets 1e-6; the 3 dB
        # margin probe fails so the robust code rate is chosen
        cfg = derive_config(_qos(), _state(distance_m=8.0, humidity_pct=70.0))
        assert cfg is not None
        assert cfg.modulation is Modulation.BPSK
        assert cfg.code_rate == 0.5

    def test_bitrate_beyond_reach_is_infeasible(self):
        # BPSK at 0.5 code rate over 5 GHz carries 2.5 Gbps, short of 4 Gbps
        cfg = derive_config(_qos(bitrate_bps=4e9), _state(distance_m=8.0, humidity_pct=70.0))
        assert cfg is None

    def test_no_modulation_is_infeasible(self):
        cfg = derive_config(_qos(), _state(distance_m=12.0, humidity_pct=80.0))
        assert cfg is None

    def test_measured_snr_overrides_budget(self):
        cfg = derive_config(_qos(), _state(measured_snr_db=15.0))
        assert cfg is not None
        assert cfg.modulation is Modulation.QPSK
        assert cfg.predicted_snr_db == 15.0

    def test_deterministic(self):
        a = derive_config(_qos(), _state())
        b = derive_config(_qos(), _state())
        assert a == b


class TestEstimateFlow:
    def _req(self, **kw):
        base = dict(id=1, kind=RequestKind.CHANNEL_ESTIMATE, qos=_qos(), state=_state(**kw))
        return RequestEnvelope(id=base["id"], kind=base["kind"], qos=base["qos"], state=base["state"])

    def test_miss_derives_and_persists(self):
        st = ConfigStore(path=None)
        out = estimate(self._req(), st)
        assert out.feasible and not out.cache_hit
        assert out.version == 1
        assert st.read(out.key).config == out.config

    def test_second_call_hits_cache(self):
        st = ConfigStore(path=None)
        first = estimate(self._req(), st)
        second = estimate(self._req(), st)
        assert second.cache_hit
        assert second.config == first.config
        assert st.stats().writes == 1

    def test_nearby_state_same_bucket_hits(self):
        st = ConfigStore(path=None)
        estimate(self._req(distance_m=2.0), st)
        out = estimate(self._req(distance_m=2.4), st)
        assert out.cache_hit

    def test_infeasible_not_cached(self):
        st = ConfigStore(path=None)
        out = estimate(self._req(distance_m=12.0, humidity_pct=80.0), st)
        assert not out.feasible and out.version is None
        again = estimate(self._req(distance_m=12.0, humidity_pct=80.0), st)
        assert not again.cache_hit
        assert st.stats().writes == 0
