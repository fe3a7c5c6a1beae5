import json
import math

import numpy as np
import pytest

from warfarin_rl.errors import ConfigError
from warfarin_rl.pkpd import (Cyp2c9, Engine, EngineConfig, PkpdParameters,
                              PkpdState, Vkorc1, fresh_state, observe_inr,
                              simulate_days, step_day)


@pytest.fixture
def engine():
    return Engine()


def noise_free(params: PkpdParameters) -> PkpdParameters:
    from dataclasses import replace
    return replace(params, residual_sd=0.0)


class TestPopulationParams:
    def test_wild_type_reference_multipliers(self, engine):
        assert engine.clearance_multiplier(Cyp2c9.S11) == 1.0
        assert engine.ec50_multiplier(Vkorc1.GG) == 1.0
        base = engine.config.population
        p = engine.population_params(67, Cyp2c9.S11, Vkorc1.GG)
        assert p.elimination_rate == pytest.approx(base["elimination_rate"])
        assert p.ec50 == pytest.approx(base["ec50"])

    def test_star3_homozygote_clearance_reduction(self, engine):
        # ~90% reduction vs wild type
        assert engine.clearance_multiplier(Cyp2c9.S33) == pytest.approx(0.1)
        ref = engine.population_params(67, Cyp2c9.S11, Vkorc1.GG)
        var = engine.population_params(67, Cyp2c9.S33, Vkorc1.GG)
        assert var.elimination_rate / ref.elimination_rate == pytest.approx(0.1)

    def test_heterozygote_is_allele_mean(self, engine):
        # mean(1.0, 0.6) applied by hand
        assert engine.clearance_multiplier(Cyp2c9.S12) == pytest.approx(0.8)
        assert engine.clearance_multiplier(Cyp2c9.S23) == pytest.approx(0.35)

    def test_age_scaling_and_clamp(self, engine):
        assert engine.age_factor(67) == 1.0
        assert engine.age_factor(77) == pytest.approx(0.95)
        assert engine.age_factor(18) == pytest.approx(1.2)  # clamped

    @pytest.mark.parametrize("age", [17.9, 101, -3])
    def test_age_out_of_range_rejected(self, engine, age):
        with pytest.raises(ValueError):
            engine.population_params(age, Cyp2c9.S11, Vkorc1.GG)


class TestIndividualize:
    def test_zero_log_sds_identity(self):
        cfg = EngineConfig(variability={"log_sd_elimination_rate": 0.0,
                                        "log_sd_ec50": 0.0, "log_sd_emax": 0.0,
                                        "residual_sd": 0.05})
        eng = Engine(cfg)
        pop = eng.population_params(67, Cyp2c9.S11, Vkorc1.GG)
        ind = eng.individualize(pop, np.random.default_rng(1))
        assert ind.elimination_rate == pop.elimination_rate
        assert ind.ec50 == pop.ec50
        assert ind.emax == pop.emax
        assert ind.bsv_multipliers == (1.0, 1.0, 1.0)

    def test_fresh_streams_same_seed_identical(self, engine):
        pop = engine.population_params(60, Cyp2c9.S12, Vkorc1.GA)
        a = engine.individualize(pop, np.random.default_rng(99))
        b = engine.individualize(pop, np.random.default_rng(99))
        assert a == b

    def test_log_sd_recovered_from_draws(self, engine):
        # Monte Carlo check against the configured parameter
        pop = engine.population_params(67, Cyp2c9.S11, Vkorc1.GG)
        rng = np.random.default_rng(7)
        logs = [math.log(engine.individualize(pop, rng).elimination_rate
                         / pop.elimination_rate) for _ in range(10_000)]
        assert abs(np.std(logs) - 0.3) < 0.02


class TestStepDay:
    def test_zero_dose_holds_baseline(self, engine):
        params = engine.population_params(67, Cyp2c9.S11, Vkorc1.GG)
        state = fresh_state()
        for _ in range(30):
            state, latent = step_day(state, params, 0.0)
            assert latent == params.baseline_inr

    def test_negative_dose_rejected(self, engine):
        params = engine.population_params(67, Cyp2c9.S11, Vkorc1.GG)
        with pytest.raises(ValueError):
            step_day(fresh_state(), params, -1.0)

    def test_steady_state_drug_amount_closed_form(self, engine):
        # geometric steady state of daily superposition
        params = engine.population_params(67, Cyp2c9.S11, Vkorc1.GG)
        dose = 5.0
        n_days = int(10 / params.elimination_rate) + 1
        state, _ = simulate_days(fresh_state(), params, np.full(n_days, dose))
        expected = dose / (1 - math.exp(-params.elimination_rate))
        assert abs(state.drug_amount - expected) / expected < 0.01

    def test_constant_dose_latent_monotone_to_plateau(self, engine):
        params = engine.population_params(67, Cyp2c9.S11, Vkorc1.GG)
        _, latents = simulate_days(fresh_state(), params, np.full(200, 7.0))
        plateau = latents[-1]
        rising = latents < 0.99 * plateau
        cutoff = int(np.argmin(rising)) if not rising.all() else len(latents)
        assert np.all(np.diff(latents[:cutoff + 1]) >= 0)

    def test_state_day_counter_advances(self, engine):
        params = engine.population_params(67, Cyp2c9.S11, Vkorc1.GG)
        state, _ = simulate_days(fresh_state(), params, np.full(7, 3.0))
        assert state.day == 7


class TestObserveInr:
    def test_zero_residual_identity(self, engine):
        params = noise_free(engine.population_params(67, Cyp2c9.S11, Vkorc1.GG))
        assert observe_inr(2.5, params, np.random.default_rng(0)) == 2.5

    def test_lognormal_mean_identity(self, engine):
        # E[x e^eps] = x exp(sd^2/2)
        params = engine.population_params(67, Cyp2c9.S11, Vkorc1.GG)
        assert params.residual_sd == 0.05
        rng = np.random.default_rng(3)
        draws = [observe_inr(2.5, params, rng) for _ in range(10_000)]
        assert abs(np.mean(draws) - 2.5 * math.exp(0.05**2 / 2)) < 0.01

    def test_floor_at_half(self, engine):
        params = engine.population_params(67, Cyp2c9.S11, Vkorc1.GG)
        rng = np.random.default_rng(11)
        assert all(observe_inr(0.5001, params, rng) >= 0.5 for _ in range(2000))

    def test_nonpositive_latent_rejected(self, engine):
        params = engine.population_params(67, Cyp2c9.S11, Vkorc1.GG)
        with pytest.raises(ValueError):
            observe_inr(0.0, params, np.random.default_rng(0))


class TestEngineInvariants:
    def test_bit_identical_sequences(self, engine):
        pop = engine.population_params(55, Cyp2c9.S13, Vkorc1.GA)
        params = engine.individualize(pop, np.random.default_rng(21))
        doses = np.random.default_rng(2).uniform(0, 12, size=90)
        _, a = simulate_days(fresh_state(), params, doses)
        _, b = simulate_days(fresh_state(), params, doses)
        assert np.array_equal(a, b)

    def test_monotone_dose_response(self, engine):
        rng = np.random.default_rng(17)
        cyps, vks = list(Cyp2c9), list(Vkorc1)
        for _ in range(20):
            pop = engine.population_params(float(rng.uniform(20, 95)),
                                           cyps[rng.integers(len(cyps))],
                                           vks[rng.integers(len(vks))])
            params = engine.individualize(pop, rng)
            lo, hi = sorted(rng.uniform(0, 15, size=2))
            _, lat_lo = simulate_days(fresh_state(), params, np.full(90, lo))
            _, lat_hi = simulate_days(fresh_state(), params, np.full(90, hi))
            assert np.all(lat_hi >= lat_lo)

    def test_sensitivity_class_ordering(self, engine):
        # class representatives under identical dosing, noise off
        reps = {"normal": (Cyp2c9.S11, Vkorc1.GG),
                "sensitive": (Cyp2c9.S11, Vkorc1.AA),
                "highly": (Cyp2c9.S33, Vkorc1.AA)}
        steady = {}
        for name, (cyp, vk) in reps.items():
            params = engine.population_params(67, cyp, vk)
            _, latents = simulate_days(fresh_state(), params, np.full(150, 5.0))
            steady[name] = latents[-30:].mean()
        assert steady["highly"] >= steady["sensitive"] >= steady["normal"]

    def test_zero_dose_fixpoint(self, engine):
        params = engine.population_params(40, Cyp2c9.S22, Vkorc1.AA)
        _, latents = simulate_days(fresh_state(), params, np.zeros(60))
        assert np.all(latents == params.baseline_inr)


class TestConfig:
    def test_json_roundtrip(self, tmp_path):
        cfg = EngineConfig()
        path = tmp_path / "engine.json"
        path.write_text(json.dumps(cfg.to_dict()))
        assert EngineConfig.from_json(path) == cfg

    def test_partial_override(self, tmp_path):
        path = tmp_path / "engine.json"
        path.write_text(json.dumps({"population": {"ec50": 40.0}}))
        cfg = EngineConfig.from_json(path)
        assert cfg.population["ec50"] == 40.0
        assert cfg.population["emax"] == 5.0  # default preserved

    def test_invalid_values_rejected(self):
        with pytest.raises(ConfigError):
            EngineConfig(population={**EngineConfig().population,
                                     "elimination_rate": -0.1})
        with pytest.raises(ConfigError):
            EngineConfig(vkorc1_ec50_multiplier={"G/G": 1.0})

    def test_malformed_file_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{nope")
        with pytest.raises(ConfigError):
            EngineConfig.from_json(path)

    def test_shipped_data_file_matches_defaults(self):
        from importlib import resources
        with resources.files("warfarin_rl.data").joinpath("pkpd_params.json").open() as fh:
            shipped = json.load(fh)
        shipped.pop("_notes")
        assert shipped == EngineConfig().to_dict()


class TestParameterValidation:
    def test_negative_rate_rejected(self):
        with pytest.raises(ValueError):
            PkpdParameters(elimination_rate=-0.4, effect_delay=3, ec50=50,
                           emax=5, hill_coefficient=1.5, baseline_inr=1.0,
                           residual_sd=0.05)

    def test_baseline_range_enforced(self):
        with pytest.raises(ValueError):
            PkpdParameters(elimination_rate=0.4, effect_delay=3, ec50=50,
                           emax=5, hill_coefficient=1.5, baseline_inr=2.0,
                           residual_sd=0.05)

    def test_state_validation(self):
        with pytest.raises(ValueError):
            PkpdState(-1.0, (0, 0, 0), 0)
        with pytest.raises(ValueError):
            PkpdState(0.0, (0, -0.1, 0), 0)
