import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from natex.dataset import (FullDataset, GenerationConfig, ObservedDataset, SchemaError,
                           add_outcome_noise, generate_covariates, generate_dataset,
                           generate_outcomes, generate_propensities, load_csv, observe,
                           perturb_propensities, read_treatment_column, sample_treatment,
                           write_csv)
from natex.metrics import distance_correlation, pearson

from conftest import random_full


# -- covariates ---------------------------------------------------------------

def test_empty_covariates_keep_columns():
    assert generate_covariates(0, 3, seed=1).shape == (0, 3)


def test_covariates_deterministic():
    a = generate_covariates(5, 2, seed=7)
    b = generate_covariates(5, 2, seed=7)
    assert np.array_equal(a, b)


def test_covariate_moments():
    X = generate_covariates(10000, 4, seed=3)
    assert np.all(np.abs(X.mean(axis=0)) < 0.05)
    assert np.all(np.abs(X.var(axis=0) - 1) < 0.1)


# -- propensities -------------------------------------------------------------

def test_zero_slope_gives_target_everywhere():
    X = generate_covariates(50, 3, seed=0)
    p = generate_propensities(X, 0.0, 0.443, seed=0)
    assert np.all(p == 0.443)


def test_propensity_mean_hits_target_and_treated_fraction():
    X = generate_covariates(20000, 10, seed=4)
    p = generate_propensities(X, 6.0, 0.443, seed=4)
    assert abs(p.mean() - 0.443) < 1e-4
    assert p.min() >= 0.01 and p.max() <= 0.99
    z = sample_treatment(p, seed=5)
    assert abs(z.mean() - 0.443) < 0.02


def test_mean_propensity_monotone_in_target():
    # raising the intercept raises every p, so calibrated targets order the same way
    X = generate_covariates(500, 3, seed=2)
    means = [generate_propensities(X, 2.0, t, seed=2).mean() for t in (0.2, 0.4, 0.6)]
    assert means == sorted(means)


# -- outcomes -----------------------------------------------------------------

def test_outcomes_below_half_have_no_effect():
    y0, y1 = generate_outcomes(np.array([0.3]), 1.0, 0.0, seed=0)
    assert y0[0] == pytest.approx(0.7, abs=1e-15)
    assert y1[0] == pytest.approx(0.7, abs=1e-15)


def test_outcome_arithmetic_above_half():
    y0, y1 = generate_outcomes(np.array([0.75]), 1.0, 0.0, seed=0)
    assert y0[0] == pytest.approx(0.25, abs=1e-15)
    assert y1[0] == pytest.approx(0.75, abs=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.01, 0.99), min_size=2, max_size=40),
       st.floats(0.0, 3.0))
def test_noiseless_recipe(ps, c):
    p = np.array(ps)
    y0, y1 = generate_outcomes(p, c, 0.0, seed=1)
    assert np.allclose(y0, 1 - p, atol=1e-15)
    assert np.all(y1[p <= 0.5] == y0[p <= 0.5])
    assert np.all(y1 >= y0)


def test_noiseless_control_correlation_is_minus_one():
    p = np.linspace(0.05, 0.95, 30)
    y0, _ = generate_outcomes(p, 1.0, 0.0, seed=0)
    assert pearson(y0, p) == pytest.approx(-1.0, abs=1e-12)


def test_default_dataset_correlations():
    full = generate_dataset(GenerationConfig(n=5000))
    assert pearson(full.y0, full.propensity) <= -0.95
    assert pearson(full.y1, full.propensity) <= -0.9


def test_generate_dataset_deterministic():
    cfg = GenerationConfig(n=300, d=3, seed=9)
    a, b = generate_dataset(cfg), generate_dataset(cfg)
    for x, y in ((a.covariates, b.covariates), (a.y1, b.y1), (a.y0, b.y0),
                 (a.propensity, b.propensity)):
        assert np.array_equal(x, y)


def test_generation_config_validation():
    with pytest.raises(SchemaError):
        GenerationConfig(n=0)
    with pytest.raises(SchemaError):
        GenerationConfig(target_treated_fraction=0.995)
    cfg = GenerationConfig.from_mapping({"n": "40", "coeff_scale": "2.5", "other": "x"})
    assert cfg.n == 40 and cfg.coeff_scale == 2.5


# -- full / observed datasets -------------------------------------------------

def test_true_ate_cached():
    full = random_full(100, seed=3)
    assert full.true_ate == pytest.approx(np.mean(full.y1 - full.y0), abs=1e-14)


def test_full_dataset_rejects_bad_propensity():
    with pytest.raises(ValueError):
        FullDataset(np.zeros((2, 1)), np.zeros(2), np.zeros(2), np.array([0.5, 0.995]))


def test_full_dataset_rejects_length_mismatch():
    with pytest.raises(ValueError):
        FullDataset(np.zeros((3, 1)), np.zeros(3), np.zeros(2), np.full(3, 0.5))


def test_subset_and_with_outcomes():
    full = random_full(10, seed=1)
    sub = full.subset(np.array([0, 3, 5]))
    assert sub.n == 3 and np.array_equal(sub.y1, full.y1[[0, 3, 5]])
    moved = full.with_outcomes(full.y1 + 1, full.y0)
    assert moved.true_ate == pytest.approx(full.true_ate + 1)


# -- treatment sampling and masking --------------------------------------------

def test_high_propensity_treated_fraction():
    z = sample_treatment(np.full(100000, 0.99), seed=0)
    assert abs(z.mean() - 0.99) < 0.005


def test_sample_treatment_deterministic():
    p = np.linspace(0.1, 0.9, 50)
    assert np.array_equal(sample_treatment(p, 4), sample_treatment(p, 4))


def test_low_propensity_expected_count():
    counts = [sample_treatment(np.full(10, 0.01), seed=s).sum() for s in range(10000)]
    assert abs(np.mean(counts) - 0.1) < 0.03


def test_observe_masks():
    full = random_full(20, seed=2)
    ones = np.ones(20, dtype=np.int8)
    assert np.array_equal(observe(full, ones).y_obs, full.y1)
    assert np.array_equal(observe(full, 0 * ones).y_obs, full.y0)
    same = full.with_outcomes(full.y0, full.y0)
    z = sample_treatment(full.propensity, 1)
    assert np.array_equal(observe(same, z).y_obs, same.y0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_masking_never_exposes_both(seed):
    full = random_full(12, seed=seed % 1000)
    z = sample_treatment(full.propensity, seed)
    obs = observe(full, z)
    assert not hasattr(obs, "y0") and not hasattr(obs, "y1")
    expected = np.where(z == 1, full.y1, full.y0)
    assert np.array_equal(obs.y_obs, expected)


def test_observe_length_mismatch():
    full = random_full(5)
    with pytest.raises(ValueError):
        observe(full, np.ones(4, dtype=np.int8))


def test_observed_dataset_rejects_nonbinary_z():
    with pytest.raises(ValueError):
        ObservedDataset(np.zeros((2, 1)), np.array([0, 2]), np.zeros(2))


# -- noise ----------------------------------------------------------------------

def test_outcome_noise_zero_is_identity_and_seeded():
    y = np.arange(5.0)
    assert np.array_equal(add_outcome_noise(y, 0.0, 1), y)
    assert np.array_equal(add_outcome_noise(y, 0.3, 2), add_outcome_noise(y, 0.3, 2))


def test_outcome_noise_lowers_distance_correlation():
    p = generate_propensities(generate_covariates(300, 3, 0), 6.0, 0.443, 0)
    y0, _ = generate_outcomes(p, 0.5, 0.0, 0)
    medians = []
    for sd in (0.0, 0.1, 0.5, 2.0):
        medians.append(np.median([distance_correlation(p, add_outcome_noise(y0, sd, s))
                                  for s in range(50)]))
    assert all(a > b for a, b in zip(medians, medians[1:]))


def test_perturb_level_zero_is_clamp():
    p = np.array([0.001, 0.3, 0.999])
    assert np.array_equal(perturb_propensities(p, 0.0, 0), np.clip(p, 0.01, 0.99))


def test_perturb_outputs_in_range_and_bce_grows():
    from natex.metrics import binary_cross_entropy
    p = generate_propensities(generate_covariates(2000, 4, 1), 6.0, 0.443, 1)
    meds = []
    for level in (0.0, 0.5, 1.0, 2.0):
        vals = []
        for s in range(50):
            z = sample_treatment(p, s)
            q = perturb_propensities(p, level, 1000 + s)
            assert q.min() >= 0.01 and q.max() <= 0.99
            vals.append(binary_cross_entropy(q, z))
        meds.append(np.median(vals))
    assert all(a <= b for a, b in zip(meds, meds[1:]))


# -- CSV --------------------------------------------------------------------------

def test_observed_round_trip(tmp_path):
    full = generate_dataset(GenerationConfig(n=40, d=3, seed=2))
    obs = observe(full, sample_treatment(full.propensity, 3))
    path = tmp_path / "obs.csv"
    write_csv(path, obs)
    back = load_csv(path, mode="observed")
    assert np.array_equal(back.covariates, obs.covariates)
    assert np.array_equal(back.z, obs.z)
    assert np.array_equal(back.y_obs, obs.y_obs)


def test_full_round_trip_with_z(tmp_path):
    full = generate_dataset(GenerationConfig(n=30, d=2, seed=5))
    z = sample_treatment(full.propensity, 1)
    path = tmp_path / "full.csv"
    write_csv(path, full, z=z)
    back = load_csv(path, mode="full")
    assert np.array_equal(back.y1, full.y1) and np.array_equal(back.propensity,
                                                                 full.propensity)
    assert np.array_equal(read_treatment_column(path), z)


def test_missing_z_column(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("x0,y_obs\n1.0,2.0\n")
    with pytest.raises(SchemaError, match="z"):
        load_csv(path, mode="observed")


def test_propensity_out_of_range_cites_row(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("x0,y0,y1,p\n0.0,1,1,0.5\n0.0,1,1,1.5\n")
    with pytest.raises(SchemaError, match="row 2"):
        load_csv(path, mode="full")


def test_non_numeric_cell_reports_position(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("x0,z,y_obs\n1.0,1,abc\n")
    with pytest.raises(SchemaError, match="row 1"):
        load_csv(path, mode="observed")
