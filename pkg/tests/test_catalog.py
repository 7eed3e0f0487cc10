import math

import numpy as np
import pytest

from conjlab import ConfigurationError, get_entry, list_entries, verify_c1, verify_c2_c3, verify_c5
from conjlab.catalog import ALIASES
from conjlab.smoothness import verify_second_order_condition


def test_ids_and_aliases():
    assert set(ALIASES.values()) == set(list_entries())
    assert get_entry("S1").id == "scalar-exp-forced"


def test_unknown_id():
    with pytest.raises(ConfigurationError, match="unknown catalog id"):
        get_entry("S9")


def test_unknown_parameter():
    with pytest.raises(ConfigurationError, match="unknown parameters"):
        get_entry("S1", lam=3)


@pytest.mark.parametrize(
    "params,inequality",
    [
        ({"nu": 0.6}, "nu < lam - M"),
        ({"M": 1.2}, "M < lam"),
        ({"eps0": 0.0, "eps1": 1.5}, "eps0 > eps1 - lam"),
    ],
)
def test_nonuniform_constraints_cite_inequality(params, inequality):
    with pytest.raises(ConfigurationError, match=inequality):
        get_entry("S4", **params)


def test_every_expected_value_is_tagged():
    for name in list_entries():
        for key, exp in get_entry(name).expected.items():
            assert exp.kind in {"trivial", "derived", "reference"}, key
            if exp.kind == "derived":
                assert exp.oracle


def test_forced_scalar_closed_form():
    # 0.1 t e^{-t} at t = 1
    e = get_entry("S1", kappa=0.1, eps0=1)
    assert e.expected["H(1,2)"].value == pytest.approx(2.0367879, abs=1e-7)


def test_sin_entry_q_bound():
    e = get_entry("S3", nu=0.1)
    assert e.expected["q_hat"].value <= 0.1 / math.e + 1e-15


@pytest.mark.parametrize("name", ["S1", "S2", "S3", "S4"])
def test_entries_pass_documented_verdicts(name):
    e = get_entry(name)
    verdicts = e.expected["verdicts"].value
    rep = verify_c1(e.spec, e.sys).merge(verify_c2_c3(e.spec, e.sys, e.nl)).merge(verify_c5(e.spec, e.sys, e.nl))
    for cond in ("c1", "c2", "c3", "c5"):
        assert rep.passed[cond] == verdicts[cond], cond
    if "second_order" in verdicts:
        assert verify_second_order_condition(e.problem(), 0.0).passed == verdicts["second_order"]


def test_unperturbed_modifier():
    e = get_entry("S2", unperturbed=True)
    x = np.array([[0.3, -1.0]])
    assert np.all(e.nl.f(np.array([0.5]), x) == 0)
    assert e.expected["p_hat"].value == 0.0


def test_negative_scale_rejected():
    with pytest.raises(ConfigurationError):
        get_entry("S3", u_scale=-1)
