"""Unit tests for the ground-truth data generators."""

import numpy as np
import pytest

from hazmix.ingest import parse_records
from hazmix.synthetic import (
    GeneratorConfig,
    simulate_intervals,
    simulate_records,
    write_records_csv,
)


class TestConfig:
    def test_mixture_validation(self):
        with pytest.raises(ValueError):
            GeneratorConfig(sigma_u=None, pi=np.array([0.7, 0.4]), mu=np.array([-1, 1]), sigma=0.5)
        with pytest.raises(ValueError):
            GeneratorConfig(sigma_u=None, pi=np.array([0.5, 0.5]), mu=np.array([1, -1]), sigma=0.5)
        with pytest.raises(ValueError):
            GeneratorConfig(sigma_u=None, pi=np.array([0.5, 0.5]), mu=np.array([-1, 1]), sigma=None)
        with pytest.raises(ValueError):
            GeneratorConfig(sigma_u=None)

    def test_is_mixture_flag(self):
        assert not GeneratorConfig().is_mixture
        mix = GeneratorConfig(
            sigma_u=None, pi=np.array([0.5, 0.5]), mu=np.array([-1.0, 1.0]), sigma=0.5
        )
        assert mix.is_mixture


class TestSimulateIntervals:
    def test_shapes_and_labels(self):
        cfg = GeneratorConfig(n_pumps=5, intervals_per_pump=9, n_states=4, seed=0)
        ivs, u, labels = simulate_intervals(cfg)
        assert len(ivs) == 45
        assert u.shape == (5,)
        assert labels is None
        assert {iv.prev_state for iv in ivs} == {1, 2, 3}
        assert all(1.0 <= iv.dt_days <= 120.0 for iv in ivs)

    def test_mixture_labels_one_based(self):
        cfg = GeneratorConfig(
            n_pumps=200, intervals_per_pump=1, sigma_u=None,
            pi=np.array([0.7, 0.3]), mu=np.array([-1.0, 1.0]), sigma=0.1, seed=1,
        )
        _, u, labels = simulate_intervals(cfg)
        assert set(labels) == {1, 2}
        # effects cluster around the component means
        assert abs(u[labels == 1].mean() + 1.0) < 0.1
        assert abs(u[labels == 2].mean() - 1.0) < 0.1

    def test_event_rate_tracks_hazard(self):
        low = GeneratorConfig(
            n_pumps=40, intervals_per_pump=25, log_lambda0=np.full(4, -7.0),
            sigma_u=0.1, seed=2,
        )
        high = GeneratorConfig(
            n_pumps=40, intervals_per_pump=25, log_lambda0=np.full(4, -4.0),
            sigma_u=0.1, seed=2,
        )
        rate_low = np.mean([iv.moved for iv in simulate_intervals(low)[0]])
        rate_high = np.mean([iv.moved for iv in simulate_intervals(high)[0]])
        assert rate_high > rate_low + 0.1

    def test_deterministic_given_seed(self):
        cfg = GeneratorConfig(n_pumps=3, intervals_per_pump=5, seed=3)
        a = simulate_intervals(cfg)[0]
        b = simulate_intervals(cfg)[0]
        for x, y in zip(a, b):
            assert x.dt_days == y.dt_days
            assert x.moved == y.moved


class TestSimulateRecords:
    def test_monthly_series_per_pump(self):
        cfg = GeneratorConfig(n_pumps=3, seed=4)
        records, u, _ = simulate_records(cfg, n_records=12)
        assert len(records) == 36
        series = [r for r in records if r.equipment_id == "P0000"]
        deltas = {(b.timestamp - a.timestamp).days for a, b in zip(series, series[1:])}
        assert deltas == {30}

    def test_high_u_pump_climbs_faster(self):
        cfg = GeneratorConfig(n_pumps=2, sigma_u=None,
                              pi=np.array([0.5, 0.5]), mu=np.array([-2.0, 2.0]),
                              sigma=0.01, seed=6)
        records, u, _ = simulate_records(cfg, n_records=40)
        finals = {}
        for r in records:
            finals[r.equipment_id] = r.value
        fast = max(range(2), key=lambda i: u[i])
        assert finals[f"P{fast:04d}"] == max(finals.values())

    def test_csv_round_trip(self, tmp_path):
        cfg = GeneratorConfig(n_pumps=2, seed=7)
        records, _, _ = simulate_records(cfg, n_records=5)
        path = tmp_path / "records.csv"
        write_records_csv(records, path)
        back = parse_records(path)
        assert len(back) == len(records)
        orig = sorted(records, key=lambda r: (r.equipment_id, r.item_id, r.timestamp))
        for a, b in zip(orig, back):
            assert a.equipment_id == b.equipment_id
            assert a.value == b.value  # repr round-trip, bit-exact
            assert a.timestamp == b.timestamp
