import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from natex.dataset import FullDataset, GenerationConfig, generate_dataset
from natex.estimators import SplitPartition, draw_split
from natex.learners import WeightScheme
from natex.variance import (CostGuardError, FixedFunctionPair, VarianceReport,
                            adjustment, all_assignments, amgm_bound_check,
                            assignment_probabilities, double_weight_expectation_identity,
                            enumerate_moments, mc_moments, term2_monte_carlo,
                            theorem1_report, theorem1_terms)

from conftest import random_full


def fixed_split(n):
    return SplitPartition(np.arange(0, n, 2), np.arange(1, n, 2))


def perfect(full):
    return FixedFunctionPair(full.y1.copy(), full.y0.copy())


def random_fixed(full, seed):
    rng = np.random.default_rng(seed)
    return FixedFunctionPair(rng.normal(size=full.n), rng.normal(size=full.n))


# -- adjustment -------------------------------------------------------------------

def test_adjustment_endpoints_and_constants():
    f1 = np.array([1.0, 2.0, 5.0])
    f0 = np.array([-1.0, 4.0, 5.0])
    assert adjustment(f1, f0, np.zeros(3)).tolist() == f1.tolist()
    assert adjustment(f1, f0, np.ones(3)).tolist() == f0.tolist()
    assert adjustment(np.full(3, 2.0), np.full(3, 2.0), np.array([0.1, 0.5, 0.8])) == \
        pytest.approx([2.0, 2.0, 2.0])


# -- enumeration -------------------------------------------------------------------

def test_assignment_probabilities_sum_to_one():
    p = np.random.default_rng(0).uniform(0.01, 0.99, size=12)
    probs = assignment_probabilities(p, all_assignments(12))
    assert math.fsum(probs) == pytest.approx(1.0, abs=1e-12)
    assert len(probs) == 2**12


def test_all_assignments_are_distinct():
    Z = all_assignments(5)
    assert len({tuple(z) for z in Z}) == 32


def test_perfect_predictions_give_zero_moments():
    full = random_full(8, seed=1)
    mean, var = enumerate_moments(full, fixed_split(8), fixed=perfect(full))
    assert abs(mean) < 1e-14 and var < 1e-28


def test_ridge_split_estimator_unbiased_n8():
    full = random_full(8, d=2, seed=2)
    mean, _ = enumerate_moments(full, fixed_split(8), WeightScheme.UNIT, 1e-6)
    assert abs(mean) < 1e-10


def test_cost_guard():
    full = random_full(15, seed=0)
    with pytest.raises(CostGuardError):
        enumerate_moments(full, fixed_split(15))


# -- closed form -----------------------------------------------------------------

def test_perfect_predictions_give_zero_terms():
    full = random_full(8, seed=3)
    r = theorem1_terms(full, fixed_split(8), fixed=perfect(full))
    assert r.term1 == pytest.approx(0.0, abs=1e-28) and r.term2 == 0.0


def test_fixed_functions_have_no_sensitivity_term():
    full = random_full(8, seed=4)
    r = theorem1_terms(full, fixed_split(8), fixed=random_fixed(full, 0))
    assert r.term2 == 0.0
    # with fixed predictions the estimator variance is the residual term alone
    assert r.closed_form_total == pytest.approx(r.enumerated_variance, abs=1e-9)


def test_closed_form_matches_enumeration_n8():
    full = random_full(8, d=2, seed=5)
    r = theorem1_terms(full, fixed_split(8), WeightScheme.UNIT, 1e-6)
    assert abs(r.closed_form_total - r.enumerated_variance) < 1e-9
    assert r.term1 >= 0 and r.term2 != 0.0


@settings(max_examples=12, deadline=None)
@given(st.sampled_from([4, 6, 8, 10, 12]), st.sampled_from([1, 2, 3]),
       st.sampled_from(list(WeightScheme)), st.integers(0, 10_000))
def test_closed_form_agreement_property(n, d, scheme, seed):
    full = random_full(n, d=d, seed=seed)
    split = draw_split(n, np.random.default_rng(seed))
    r = theorem1_terms(full, split, scheme, 1e-6)
    assert r.term1 >= 0
    assert abs(r.closed_form_total - r.enumerated_variance) < 1e-9
    assert abs(r.enumerated_mean) < 1e-10


def test_split_averaged_report():
    full = random_full(8, d=2, seed=6)
    r = theorem1_report(full, WeightScheme.DOUBLE, 1e-6, n_splits=3, seed=1)
    assert abs(r.closed_form_total - r.enumerated_variance) < 1e-9
    row = r.to_csv_row().split(",")
    assert len(row) == len(VarianceReport.HEADER.split(",")) and row[-1] == ""
    assert "closed-form total" in r.summary()


def test_second_term_small_and_shrinking_relative_to_first():
    ratios = []
    for n in (200, 800):
        full = generate_dataset(GenerationConfig(n=n))
        split = draw_split(n, np.random.default_rng(0))
        t1, t2, _ = term2_monte_carlo(full, split, WeightScheme.UNIT, 1e-6, 4, seed=0)
        ratios.append(t1 / abs(t2))
    assert abs(t2) < 1e-4
    assert ratios[0] > 10 and ratios[1] > 2 * ratios[0]


def test_term2_monte_carlo_agrees_with_enumeration():
    full = generate_dataset(GenerationConfig(n=8, d=2, seed=3))
    split = fixed_split(8)
    exact = theorem1_terms(full, split, WeightScheme.UNIT, 1e-6, enumerate=False)
    _, t2, se = term2_monte_carlo(full, split, WeightScheme.UNIT, 1e-6, 400, seed=1)
    assert abs(t2 - exact.term2) < 4 * se


# -- Monte Carlo -----------------------------------------------------------------

def test_mc_forced_assignment_has_zero_variance():
    full = random_full(10, seed=7)
    z = (np.arange(10) % 2).astype(np.int8)
    _, var, _ = mc_moments(full, "dr-split", 2, seed=0, z=z, split=fixed_split(10))
    assert var == 0.0


def test_mc_validates_arguments():
    full = random_full(6)
    with pytest.raises(ValueError):
        mc_moments(full, "dr-split", 1)
    with pytest.raises(KeyError):
        mc_moments(full, "no-such-estimator", 5)


def test_mc_mean_agrees_with_enumeration():
    full = random_full(10, d=2, seed=8)
    enum_mean, _ = enumerate_moments(full, fixed_split(10), WeightScheme.DOUBLE, 1e-6)
    hits = 0
    for rep in range(100):
        mean, _, se = mc_moments(full, "double-double", 60, seed=rep)
        hits += abs(mean - enum_mean) <= 3 * se
    assert hits >= 99


def test_double_double_unbiased_on_generated_data():
    full = generate_dataset(GenerationConfig(n=1000, seed=4))
    mean, _, se = mc_moments(full, "double-double", 200, seed=3)
    assert abs(mean) < 3 * se


# -- AM-GM bound and double-weight identity -----------------------------------------

def test_amgm_zero_residuals():
    full = random_full(10, seed=9)
    bound, term1, holds = amgm_bound_check(full, perfect(full))
    assert bound == 0.0 and term1 == 0.0 and holds


def test_amgm_equality_case():
    rng = np.random.default_rng(10)
    n = 12
    p = rng.uniform(0.05, 0.95, size=n)
    r1 = rng.normal(size=n)
    r0 = r1 * (1 - p) / p  # makes both weighted residuals equal
    y1, y0 = rng.normal(size=n), rng.normal(size=n)
    full = FullDataset(np.zeros((n, 1)), y1, y0, p)
    bound, term1, holds = amgm_bound_check(full, FixedFunctionPair(y1 - r1, y0 - r0))
    assert holds and abs(term1 - bound) < 1e-12


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 40), st.integers(0, 2**31 - 1))
def test_amgm_bound_always_holds(n, seed):
    full = random_full(n, seed=seed % 100_000, p_low=0.01, p_high=0.99)
    _, _, holds = amgm_bound_check(full, random_fixed(full, seed))
    assert holds


def test_double_weight_identity():
    full = random_full(50, seed=11)
    lhs, rhs = double_weight_expectation_identity(full, random_fixed(full, 3))
    assert lhs == pytest.approx(rhs, rel=1e-12)
    zero = double_weight_expectation_identity(full, perfect(full))
    assert zero == (0.0, 0.0)


def test_double_weight_identity_by_enumeration():
    full = random_full(10, seed=12)
    fixed = random_fixed(full, 4)
    lhs, _ = double_weight_expectation_identity(full, fixed)
    r1 = full.y1 - fixed.values(full.covariates)[0]
    p = full.propensity
    Z = all_assignments(10)
    probs = assignment_probabilities(p, Z)
    losses = (Z * ((1 - p) / p**2 * r1**2)).sum(axis=1)
    assert math.fsum(probs * losses) == pytest.approx(lhs, abs=1e-12)
