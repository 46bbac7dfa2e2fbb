import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vdrisk.cohort import AssessmentRecord, SyntheticCohortConfig, cohort_columns, generate_synthetic_cohort
from vdrisk.errors import IncompleteInputError, InvalidInputError, SaturationError
from vdrisk.score2 import (
    Score2Coefficients,
    calibrate,
    Calibration,
    linear_predictor,
    load_coefficients,
    score_columns,
    score_record,
    stratify_score2,
    ten_year_risk,
)

UNITS = {"age": "years", "sbp": "mmHg", "total_chol": "mmol/L", "hdl_chol": "mmol/L", "smoker": "boolean"}


def _config(terms, s0=0.95, cal=(0.0, 1.0)):
    return Score2Coefficients.from_dict({
        "sex": {"male": terms, "female": terms},
        "baseline_survival_10y": s0,
        "calibration": {"scale1": cal[0], "scale2": cal[1]},
        "units": UNITS,
    })


def _person(**kw):
    base = dict(participant_id="P", assessment="baseline", age=65, sex="male", sbp=140.0, dbp=85.0,
                antihypertensive_med=False, smoker=True, diabetes=False, prior_cvd=False,
                total_chol=6.3, hdl_chol=1.1, vd_confidence=0.5)
    base.update(kw)
    return AssessmentRecord(**base)


def test_zero_coefficients():
    cfg = _config([{"variable": v, "center": 1, "scale": 2, "coefficient": 0} for v in ("age", "sbp")])
    assert linear_predictor(_person(), cfg) == 0.0


def test_single_term_identity():
    cfg = _config([{"variable": "age", "center": 60, "scale": 5, "coefficient": 0.5}])
    assert linear_predictor(_person(age=65), cfg) == 0.5


def test_demo_config_matches_hand_sum():
    cfg = load_coefficients()
    # male, 65, smoker, sbp 140, total 6.3, hdl 1.1; written out term by term
    a = (65 - 60) / 5
    expected = (0.3742 * a + 0.6012 * 1 + 0.2777 * (140 - 120) / 20 + 0.1458 * (6.3 - 6) / 1
                + -0.2698 * (1.1 - 1.3) / 0.5 + -0.0755 * 1 * a + -0.0255 * (140 - 120) / 20 * a
                + -0.0281 * (6.3 - 6) * a + 0.0426 * (1.1 - 1.3) / 0.5 * a)
    assert linear_predictor(_person(), cfg) == pytest.approx(expected, abs=1e-12)
    female = _person(sex="female", smoker=False, age=52, sbp=128.0, total_chol=5.1, hdl_chol=1.6)
    a = (52 - 60) / 5
    expected = (0.4648 * a + 0.3131 * 8 / 20 + 0.1002 * -0.9 + -0.2606 * 0.3 / 0.5
                + -0.0277 * 8 / 20 * a + -0.0226 * -0.9 * a + 0.0613 * 0.3 / 0.5 * a)
    assert linear_predictor(female, cfg) == pytest.approx(expected, abs=1e-12)


def test_missing_variable_named():
    with pytest.raises(IncompleteInputError) as err:
        linear_predictor(_person(total_chol=None), load_coefficients())
    assert err.value.variable == "total_chol"


def test_ineligible_rejected():
    with pytest.raises(InvalidInputError):
        linear_predictor(_person(age=72), load_coefficients())
    with pytest.raises(InvalidInputError):
        linear_predictor(_person(diabetes=True), load_coefficients())


def test_risk_at_zero_lp():
    cfg = _config([{"variable": "age", "center": 60, "scale": 5, "coefficient": 0.5}], s0=0.93)
    est = ten_year_risk(0.0, cfg)
    assert est.uncalibrated_risk == pytest.approx(0.07, abs=1e-15)
    # calibration (0, 1) is the identity
    assert est.calibrated_risk == pytest.approx(est.uncalibrated_risk, abs=1e-15)


def test_risk_two_line_recomputation():
    cfg = _config([{"variable": "age", "center": 60, "scale": 5, "coefficient": 0.5}], 0.95, (-0.1, 1.05))
    est = ten_year_risk(0.3, cfg)
    uncal = 1 - 0.95 ** math.exp(0.3)
    cal = 1 - math.exp(-math.exp(-0.1 + 1.05 * math.log(-math.log(1 - uncal))))
    assert est.uncalibrated_risk == pytest.approx(uncal, abs=1e-12)
    assert est.calibrated_risk == pytest.approx(cal, abs=1e-12)
    assert est.stratum == ("high" if cal >= 0.08 else "low")


def test_saturation():
    cfg = _config([{"variable": "age", "center": 60, "scale": 5, "coefficient": 0.5}])
    with pytest.raises(SaturationError):
        ten_year_risk(60.0, cfg)
    with pytest.raises(SaturationError):
        ten_year_risk(-60.0, cfg)


def test_stratify_boundaries():
    assert stratify_score2(0.08) == "high"
    assert stratify_score2(0.0) == "low"
    assert stratify_score2(0.0799999) == "low"
    assert stratify_score2(0.05, threshold=0.05) == "high"


@given(st.floats(0.001, 0.9), st.floats(0.001, 0.9), st.floats(-1, 1), st.floats(0.2, 2))
def test_calibration_monotone(r1, r2, s1, s2):
    if r1 == r2:
        return
    lo, hi = sorted((r1, r2))
    cal = Calibration(s1, s2)
    assert calibrate(lo, cal) < calibrate(hi, cal) or calibrate(lo, cal) == calibrate(hi, cal) == 0


def test_risk_increasing_in_positive_coefficient_variable():
    cfg = load_coefficients()
    risks = [score_record(_person(sbp=float(s)), cfg).calibrated_risk for s in range(100, 200, 10)]
    assert np.all(np.diff(risks) > 0)


def test_unit_mismatch_rejected(tmp_path):
    doc = json.loads(json.dumps({
        "sex": {"male": [{"variable": "total_chol", "center": 6, "scale": 1, "coefficient": 0.1}]},
        "baseline_survival_10y": 0.95, "calibration": {"scale1": 0, "scale2": 1},
        "units": {"total_chol": "mg/dL"}}))
    (tmp_path / "c.json").write_text(json.dumps(doc))
    with pytest.raises(InvalidInputError):
        load_coefficients(tmp_path / "c.json")


def test_bad_baseline_survival():
    with pytest.raises(InvalidInputError):
        _config([{"variable": "age", "center": 60, "scale": 5, "coefficient": 0.5}], s0=1.0)


def test_vectorised_scoring_matches_records():
    cfg = load_coefficients()
    records, outcomes = generate_synthetic_cohort(SyntheticCohortConfig(n=300, seed=4, missing_chol=0.1))
    cols = cohort_columns(records, outcomes)
    eligible, lp, uncal, cal = score_columns(cols, cfg)
    for i, r in enumerate(records):
        assert eligible[i] == r.score2_eligible
        if r.score2_eligible and r.score2_complete:
            est = score_record(r, cfg)
            assert lp[i] == pytest.approx(est.linear_predictor, abs=1e-12)
            assert cal[i] == pytest.approx(est.calibrated_risk, abs=1e-12)
        else:
            assert math.isnan(cal[i])
