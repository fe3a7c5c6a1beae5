import itertools
import json

import numpy as np
import pytest

from warfarin_rl.cohort import (PatientProfile, Sensitivity, classify_sensitivity,
                                generate_cohort, load_cohort, load_distributions,
                                sample_patient, save_cohort)
from warfarin_rl.errors import ConfigError
from warfarin_rl.pkpd import Cyp2c9, Engine, Vkorc1
from warfarin_rl.seeding import NS_PATIENT, substream

N, S, H = Sensitivity.NORMAL, Sensitivity.SENSITIVE, Sensitivity.HIGHLY_SENSITIVE

# published sensitivity grid: rows G/G, G/A, A/A; columns *1/*1 .. *3/*3
EXPECTED_GRID = {
    Vkorc1.GG: (N, N, S, S, S, H),
    Vkorc1.GA: (N, S, S, S, H, H),
    Vkorc1.AA: (S, S, H, H, H, H),
}


@pytest.fixture(scope="module")
def big_cohort():
    return generate_cohort(100_000, master_seed=12345)


class TestSensitivityGrid:
    def test_all_18_cells(self):
        for vk, row in EXPECTED_GRID.items():
            for cyp, expected in zip(Cyp2c9, row):
                assert classify_sensitivity(cyp, vk) == expected, (cyp, vk)

    def test_total_function(self):
        for cyp, vk in itertools.product(Cyp2c9, Vkorc1):
            assert isinstance(classify_sensitivity(cyp, vk), Sensitivity)


class TestSampling:
    def test_cyp_wild_type_prevalence(self, big_cohort):
        frac = sum(p.cyp2c9 == Cyp2c9.S11 for p in big_cohort) / len(big_cohort)
        assert abs(frac - 0.6739) < 0.005

    def test_vkorc1_aa_prevalence(self, big_cohort):
        frac = sum(p.vkorc1 == Vkorc1.AA for p in big_cohort) / len(big_cohort)
        assert abs(frac - 0.1745) < 0.005

    def test_ages_within_range(self, big_cohort):
        assert all(18 <= p.age <= 100 for p in big_cohort)

    def test_age_moments_match_targets(self, big_cohort):
        ages = np.array([p.age for p in big_cohort])
        assert abs(ages.mean() - 67.3) < 0.5
        assert abs(ages.std() - 14.43) < 0.5

    def test_anthropometrics_in_range(self, big_cohort):
        sample = big_cohort[:5000]
        assert all(70 <= p.weight <= 500 for p in sample)
        assert all(45 <= p.height <= 85 for p in sample)

    def test_genotype_independence_chi_square(self, big_cohort):
        # fails to reject independence at alpha=0.001
        counts = np.zeros((6, 3))
        cyp_idx = {g: i for i, g in enumerate(Cyp2c9)}
        vk_idx = {g: i for i, g in enumerate(Vkorc1)}
        for p in big_cohort:
            counts[cyp_idx[p.cyp2c9], vk_idx[p.vkorc1]] += 1
        expected = np.outer(counts.sum(axis=1), counts.sum(axis=0)) / counts.sum()
        stat = float(((counts - expected) ** 2 / expected).sum())
        chi2_crit_df10_a001 = 29.588  # chi-square(10) upper 0.001 quantile
        assert stat < chi2_crit_df10_a001


class TestCohortGeneration:
    def test_same_seed_identical(self):
        assert generate_cohort(25, 7) == generate_cohort(25, 7)

    def test_single_patient_valid(self):
        (p,) = generate_cohort(1, 3)
        assert isinstance(p, PatientProfile)
        assert p.id == 0
        assert p.hidden_params.elimination_rate > 0

    def test_size_validation(self):
        with pytest.raises(ValueError):
            generate_cohort(0, 1)

    def test_order_independence(self):
        cohort = generate_cohort(10, 99)
        engine, dist = Engine(), load_distributions()
        for i in (0, 4, 9):
            alone = sample_patient(dist, substream(99, NS_PATIENT, i), engine, i)
            assert alone == cohort[i]

    def test_class_proportions_match_marginal_products(self):
        # expected class mass = sum of Table-3 joint products over the grid
        dist = load_distributions()
        expected = {N: 0.0, S: 0.0, H: 0.0}
        for cyp, vk in itertools.product(Cyp2c9, Vkorc1):
            mass = dist["cyp2c9"][cyp.value] * dist["vkorc1"][vk.value]
            expected[classify_sensitivity(cyp, vk)] += mass
        cohort = generate_cohort(10_000, 31415)
        for cls, mass in expected.items():
            frac = sum(p.sensitivity == cls for p in cohort) / len(cohort)
            assert abs(frac - mass) < 0.015, cls


class TestDistributionConfig:
    def test_defaults_sum_to_one(self):
        dist = load_distributions()
        for name in ("cyp2c9", "vkorc1", "gender", "race", "tobacco",
                     "amiodarone", "fluvastatin"):
            assert abs(sum(dist[name].values()) - 1.0) < 1e-9, name

    def test_bad_sum_rejected(self, tmp_path):
        path = tmp_path / "dist.json"
        path.write_text(json.dumps({"vkorc1": {"G/G": 0.5, "G/A": 0.4, "A/A": 0.2}}))
        with pytest.raises(ConfigError):
            load_distributions(path)

    def test_missing_categorical_rejected(self, tmp_path):
        path = tmp_path / "dist.json"
        path.write_text(json.dumps({"gender": {}}))
        with pytest.raises(ConfigError):
            load_distributions(path)

    def test_shipped_data_file_matches_defaults(self):
        from importlib import resources
        with resources.files("warfarin_rl.data") \
                .joinpath("patient_distributions.json").open() as fh:
            shipped = json.load(fh)
        shipped.pop("_notes")
        assert shipped == load_distributions()


class TestPersistence:
    def test_round_trip(self, tmp_path):
        cohort = generate_cohort(50, 2)
        path = tmp_path / "cohort.jsonl"
        save_cohort(cohort, path, meta={"master_seed": 2})
        loaded, meta = load_cohort(path)
        assert loaded == cohort
        assert meta["n"] == 50 and meta["master_seed"] == 2

    def test_byte_stable(self, tmp_path):
        cohort = generate_cohort(20, 5)
        p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        save_cohort(cohort, p1)
        save_cohort(cohort, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_latent_key_marks_hidden_params(self, tmp_path):
        cohort = generate_cohort(1, 8)
        path = tmp_path / "c.jsonl"
        save_cohort(cohort, path)
        record = json.loads(path.read_text().splitlines()[1])
        assert "latent" in record
        assert "elimination_rate" in record["latent"]
