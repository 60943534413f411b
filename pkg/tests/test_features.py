import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ndtlos.adcpm import predicted_peak_bin
from ndtlos.channel import DESK_ARRAY, DESK_OFDM, ChannelMatrix, estimate_channel_ls, simulate_uplink, synth_cfr
from ndtlos.errors import InvalidInputError
from ndtlos.features import (
    CSV_HEADER, Scaler, estimate_mpc, extract_features, feature_matrix, read_feature_csv, standardize,
    write_feature_csv,
)
from ndtlos.geometry import MultipathSet, PathComponent

from _oracles import aligned_path


def paths(*rows):
    return MultipathSet([PathComponent(*r) for r in rows], True, (0.0, 0.0, 0.0))


def test_single_path_degenerate_spreads():
    f = extract_features(paths((0.5, 100e-9, 0.3, 0.1, 0)))
    assert (f.p_rss, f.p_max) == (0.5, 0.25)
    assert f.tau_rms == 0 and f.delta_tau == 0 and f.theta_rms == 0 and f.phi_rms == 0


def test_two_equal_paths_delay_spread():
    t = 80e-9
    f = extract_features(paths((1.0, 0.0, 0.0, 0.0, 0), (1.0, t, 0.0, 0.0, 1)))
    assert f.tau_rms == pytest.approx(t / 2, rel=1e-12)


def test_rss_sums_magnitudes():
    f = extract_features(paths((0.6, 10e-9, 0, 0, 0), (0.4, 20e-9, 0, 0, 1)))
    assert f.p_rss == pytest.approx(1.0)
    assert f.p_max == pytest.approx(0.36)


def test_rise_time_to_strongest_path():
    f = extract_features(paths((0.2, 10e-9, 0, 0, 0), (0.9, 45e-9, 0, 0, 1), (0.1, 90e-9, 0, 0, 2)))
    assert f.delta_tau == pytest.approx(35e-9)


def test_azimuth_spread_wraps():
    # two paths straddling +-pi are 0.2 rad apart, not ~2 pi
    f = extract_features(paths((1.0, 0.0, math.pi - 0.1, 0, 0), (1.0, 1e-9, -math.pi + 0.1, 0, 1)))
    assert f.theta_rms == pytest.approx(0.1, rel=1e-9)


def test_hand_weighted_spreads():
    # weights 4:1 on elevations 0.1 and 0.6 -> mean 0.2, rms sqrt((4*0.01 + 0.16)/5) = 0.2
    f = extract_features(paths((2.0, 0.0, 0.0, 0.1, 0), (1.0, 1e-9, 0.0, 0.6, 1)))
    assert f.phi_rms == pytest.approx(0.2, rel=1e-12)


def test_empty_set_rejected():
    with pytest.raises(InvalidInputError):
        extract_features(MultipathSet([], False, (0, 0, 0)))


path_st = st.tuples(st.floats(1e-4, 1.0), st.floats(0, 1e-6), st.floats(-3.1, 3.1), st.floats(-1.5, 1.5))


@given(st.lists(path_st, min_size=1, max_size=6), st.floats(1e-3, 1e3))
def test_scale_covariance(rows, c):
    ms = paths(*[(*r, 0) for r in rows])
    scaled = paths(*[(r[0] * c, *r[1:], 0) for r in rows])
    f, g = extract_features(ms), extract_features(scaled)
    assert g.p_rss == pytest.approx(c * f.p_rss, rel=1e-9)
    assert g.p_max == pytest.approx(c * c * f.p_max, rel=1e-9)
    for name in ("tau_rms", "delta_tau", "theta_rms", "phi_rms"):
        assert getattr(g, name) == pytest.approx(getattr(f, name), rel=1e-6, abs=1e-15)
    assert all(v >= 0 and math.isfinite(v) for v in f.as_array())


@given(st.lists(path_st, min_size=1, max_size=6), st.floats(0, 1e-6))
def test_delay_origin_invariance(rows, shift):
    f = extract_features(paths(*[(*r, 0) for r in rows]))
    g = extract_features(paths(*[(r[0], r[1] + shift, *r[2:], 0) for r in rows]))
    scale = max(r[1] for r in rows) + shift
    assert g.tau_rms == pytest.approx(f.tau_rms, abs=1e-9 * scale)
    assert g.delta_tau == pytest.approx(f.delta_tau, abs=1e-9 * scale)


def test_mpc_round_trip_dominant_path():
    """Re-synthesizing an estimated path set keeps its dominant path within one bin."""
    rng = np.random.default_rng(5)
    Ts = DESK_OFDM.sample_interval
    for _ in range(10):
        ps = [PathComponent(rng.uniform(0.2, 1), rng.uniform(0, 80) * Ts, rng.uniform(-1, 1),
                            rng.uniform(-0.3, 0.3), 0) for _ in range(3)]
        H = synth_cfr(MultipathSet(ps, True, (0, 0, 0)), DESK_ARRAY, DESK_OFDM)
        est = estimate_mpc(estimate_channel_ls(simulate_uplink(H, math.inf, 0)), DESK_ARRAY, DESK_OFDM)
        dom = max(est.paths, key=lambda p: p.gain)
        H2 = synth_cfr(MultipathSet(est.paths, True, (0, 0, 0)), DESK_ARRAY, DESK_OFDM)
        est2 = estimate_mpc(estimate_channel_ls(simulate_uplink(H2, math.inf, 0)), DESK_ARRAY, DESK_OFDM)
        dom2 = max(est2.paths, key=lambda p: p.gain)
        assert abs(dom2.delay - dom.delay) <= Ts
        assert predicted_peak_bin(DESK_ARRAY, DESK_OFDM, dom2.azimuth, dom2.elevation, dom2.delay)[0] == \
            predicted_peak_bin(DESK_ARRAY, DESK_OFDM, dom.azimuth, dom.elevation, dom.delay)[0]


def test_mpc_single_aligned_path():
    rng = np.random.default_rng(21)
    for _ in range(20):
        p, _ = aligned_path(rng, DESK_ARRAY, DESK_OFDM)
        H = synth_cfr(MultipathSet([p], True, (0, 0, 0)), DESK_ARRAY, DESK_OFDM)
        est = estimate_mpc(estimate_channel_ls(simulate_uplink(H, math.inf, 0)), DESK_ARRAY, DESK_OFDM)
        assert est.estimated and not est.is_los
        assert len(est.paths) == 1
        q = est.paths[0]
        assert abs(q.delay - p.delay) < DESK_OFDM.sample_interval / 2
        assert q.gain == pytest.approx(p.gain, rel=0.05)
        assert q.azimuth == pytest.approx(p.azimuth, abs=1e-9)
        assert q.elevation == pytest.approx(p.elevation, abs=1e-9)


def test_mpc_two_separated_paths_at_20db():
    Ts = DESK_OFDM.sample_interval
    # beams (row 2, col 4) and (row 1, col 7): > 2 bins apart in angle, delays 10 bins apart
    a = PathComponent(1.0, 5 * Ts, 0.0, 0.0, 0)
    el = math.asin(-1 / (4 * 0.8))
    b = PathComponent(0.8, 15 * Ts, math.asin(3 / (8 * 0.5 * math.cos(el))), el, 1)
    H = synth_cfr(MultipathSet([a, b], True, (0, 0, 0)), DESK_ARRAY, DESK_OFDM)
    est = estimate_mpc(estimate_channel_ls(simulate_uplink(H, 20.0, 3)), DESK_ARRAY, DESK_OFDM)
    delays = sorted(round(p.delay / Ts) for p in est.paths)
    assert 5 in delays and 15 in delays


def test_mpc_zero_channel_is_empty():
    est = estimate_mpc(ChannelMatrix(np.zeros((32, 128)), kind="estimated"), DESK_ARRAY, DESK_OFDM)
    assert est.paths == []


def test_mpc_caps_path_count():
    rng = np.random.default_rng(0)
    H = ChannelMatrix(rng.standard_normal((32, 128)) + 0j, kind="estimated")
    assert len(estimate_mpc(H, DESK_ARRAY, DESK_OFDM, max_paths=3, threshold_db=40).paths) == 3


def test_mpc_rejects_nonfinite():
    with pytest.raises(InvalidInputError):
        estimate_mpc(ChannelMatrix(np.full((32, 128), np.nan), kind="estimated"), DESK_ARRAY, DESK_OFDM)


def test_scaler_constant_column_passes_through():
    X = np.column_stack([np.arange(5.0), np.full(5, 7.0)])
    Z, sc = standardize(X)
    assert sc.zero_variance.tolist() == [False, True]
    assert np.array_equal(Z[:, 1], X[:, 1])


def test_scaler_fit_on_itself():
    X = np.random.default_rng(0).normal(3, 2, (50, 6))
    Z, _ = standardize(X)
    assert np.all(np.abs(Z.mean(axis=0)) < 1e-12)
    assert np.allclose(Z.var(axis=0), 1.0, atol=1e-12)


def test_scaler_from_train_only():
    rng = np.random.default_rng(1)
    train, test = rng.normal(0, 1, (40, 6)), rng.normal(2, 1, (40, 6))
    sc = Scaler.fit(train)
    assert np.all(sc.transform(test).mean(axis=0) > 1.0)


def test_scaler_needs_two_rows():
    with pytest.raises(InvalidInputError):
        Scaler.fit(np.ones((1, 6)))


def test_feature_csv_round_trip(tmp_path):
    vecs = [extract_features(paths((0.5 + i, 1e-8 * i, 0.1 * i, 0.05, 0))) for i in range(4)]
    X = feature_matrix(vecs)
    write_feature_csv(tmp_path / "f.csv", X, [1, 0, 1, 0], -15.0)
    assert (tmp_path / "f.csv").read_text().splitlines()[0] == ",".join(CSV_HEADER)
    Xb, y, snr = read_feature_csv(tmp_path / "f.csv")
    assert np.array_equal(Xb, X) and y.tolist() == [1, 0, 1, 0] and np.all(snr == -15.0)
