from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from followage.taxonomy import (DEFAULT_TAXONOMY, TaxonomyError, default_prior, load_taxonomy, proxy_to_weights,
                                read_taxonomy, years_to_category)


def test_default_bands():
    assert DEFAULT_TAXONOMY.labels == ["<12", "12-13", "14-15", "16-17", "18-24", "25-34", "35-44", "45-54",
                                       "55-64", ">=65"]


def test_seven_band_file(data_dir):
    t = read_taxonomy(data_dir / "taxonomy_decades.txt")
    assert len(t) == 7
    assert years_to_category(t, 10) == 0
    assert years_to_category(t, 79) == 6
    with pytest.raises(TaxonomyError):
        years_to_category(t, 80)


def test_overlap_names_the_pair():
    with pytest.raises(TaxonomyError, match="overlap between bands 0 .* and 1"):
        load_taxonomy("0\t0\t17\n1\t15\t30\n")


def test_gap_is_an_error():
    with pytest.raises(TaxonomyError, match="gap"):
        load_taxonomy("0\t0\t17\n1\t19\t30\n")


@pytest.mark.parametrize("age, idx", [(22, 4), (12, 1), (150, 9), (0, 0), (11, 0), (65, 9), (64, 8), (18, 4)])
def test_years_to_category(age, idx):
    assert years_to_category(DEFAULT_TAXONOMY, age) == idx


def test_proxies():
    np.testing.assert_array_equal(proxy_to_weights(DEFAULT_TAXONOMY, "retired"), [0] * 9 + [1])
    g = proxy_to_weights(DEFAULT_TAXONOMY, "grandparent")
    np.testing.assert_allclose(g, [0] * 7 + [1 / 3] * 3, rtol=0, atol=1e-15)
    assert g.sum() == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(TaxonomyError):
        proxy_to_weights(DEFAULT_TAXONOMY, "astronaut")


def test_default_prior_exact():
    pi = default_prior(DEFAULT_TAXONOMY)
    expected = [Fraction(p, 100) for p in (1, 2, 2, 3, 14, 23, 23, 22, 6, 4)]
    assert [float(e) for e in expected] == list(pi)
    assert sum(expected) == 1
    assert pi.sum() == pytest.approx(1.0, abs=1e-12)


def test_non_default_taxonomy_needs_prior(data_dir):
    t = read_taxonomy(data_dir / "taxonomy_decades.txt")
    with pytest.raises(TaxonomyError, match="prior file"):
        default_prior(t)
    pi = default_prior(t, data_dir / "prior_uniform7.txt")
    np.testing.assert_allclose(pi, np.full(7, 1 / 7), rtol=0, atol=1e-15)


def test_prior_file_length_checked(tmp_path):
    p = tmp_path / "prior.txt"
    p.write_text("0.5\n0.5\n")
    with pytest.raises(TaxonomyError):
        default_prior(DEFAULT_TAXONOMY, p)


def test_roundtrip_text():
    assert load_taxonomy(DEFAULT_TAXONOMY.to_text()) == DEFAULT_TAXONOMY


def test_bad_proxy_weights():
    with pytest.raises(TaxonomyError, match="sum"):
        load_taxonomy("0\t*\t17\n1\t18\t*\nproxy\told\t0.5,0.6\n")


@given(st.integers(0, 119))
def test_every_age_maps_to_one_monotone_index(age):
    hits = [b.index for b in DEFAULT_TAXONOMY.bands if b.contains(age)]
    assert len(hits) == 1
    a, b = years_to_category(DEFAULT_TAXONOMY, age), years_to_category(DEFAULT_TAXONOMY, age + 1)
    assert b - a in (0, 1)


@given(st.lists(st.integers(1, 50), min_size=2, max_size=8))
def test_proxy_weights_always_normalized(raw):
    total = sum(raw)
    ws = ",".join(f"{r}/{total}" for r in raw)
    n = len(raw)
    lines = ["0\t*\t9"] + [f"{i}\t{10 * i}\t{10 * i + 9}" for i in range(1, n - 1)] + [f"{n - 1}\t{10 * (n - 1)}\t*"]
    t = load_taxonomy("\n".join(lines + [f"proxy\tx\t{ws}"]))
    assert abs(proxy_to_weights(t, "x").sum() - 1.0) <= 1e-9
