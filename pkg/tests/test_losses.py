import json
import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from palletmap.errors import ValidationError
from palletmap.geometry import BoundingBox
from palletmap.gradcheck import REL_TOL, STEP, ciou_fd, random_box_pair, rel_err, run_all
from palletmap.losses import (
    DflBins,
    LossWeights,
    TuningConfig,
    bce_loss,
    ce_loss,
    ciou_grad,
    ciou_loss,
    dfl_grad,
    dfl_loss,
    load_tuning_config,
    mean_loss,
    total_loss,
    tuned_weights_config,
)

# scripted by hand from the term definitions, independent of the library:
# IoU = 4/12, rho^2 = 0, v = 4/pi^2 (atan 2 - atan 0.5)^2, alpha = v / (2/3 + v)
CONCENTRIC_LOSS = 0.7004183350773472


def test_ciou_identical_is_exactly_zero():
    b = BoundingBox(3.5, -2, 17, 40)
    assert ciou_loss(b, b).loss == 0.0


def test_ciou_side_by_side():
    t = ciou_loss(BoundingBox(0, 0, 2, 2), BoundingBox(1, 0, 3, 2))
    assert t.iou == pytest.approx(1 / 3, abs=1e-12)
    assert (t.rho_sq, t.c_sq, t.v) == (1.0, 13.0, 0.0)
    assert t.loss == pytest.approx(2 / 3 + 1 / 13, abs=1e-9)


def test_ciou_concentric():
    t = ciou_loss(BoundingBox(-1, -2, 1, 2), BoundingBox(-2, -1, 2, 1))
    assert t.rho_sq == 0.0
    assert t.loss == pytest.approx(CONCENTRIC_LOSS, abs=1e-9)


def test_ciou_grad_at_identity_vanishes_and_matches_fd():
    b = BoundingBox(10, 20, 40, 35)
    g = ciou_grad(b, b)
    assert np.all(g == 0.0)
    assert np.max(np.abs(ciou_fd(b, b))) < 1e-6


coord = st.floats(-100, 100)
ext = st.floats(0.5, 80)


@st.composite
def box(draw):
    x, y = draw(coord), draw(coord)
    return BoundingBox(x, y, x + draw(ext), y + draw(ext))


@given(box(), box())
def test_ciou_nonnegative_and_zero_only_at_identity(a, b):
    loss = ciou_loss(a, b).loss
    assert loss >= 0.0
    if max(abs(p - q) for p, q in zip(a.as_tuple(), b.as_tuple())) > 1e-12:
        assert loss > 0.0


@given(box(), box(), st.integers(-500, 500), st.integers(-500, 500), st.sampled_from([0.125, 0.5, 3.0, 16.0]))
def test_ciou_translation_and_scale_invariance(a, b, dx, dy, s):
    base = ciou_loss(a, b).loss
    moved = ciou_loss(a.translate(dx, dy), b.translate(dx, dy)).loss
    scaled = ciou_loss(a.scale(s), b.scale(s)).loss
    assert moved == pytest.approx(base, rel=1e-9, abs=1e-9)
    assert scaled == pytest.approx(base, rel=1e-9, abs=1e-12)


def test_bce_examples():
    assert bce_loss(1, 1.0) == pytest.approx(1e-7, abs=1e-9)
    assert bce_loss(1, 0.5) == pytest.approx(math.log(2), abs=1e-12)
    assert bce_loss(0, 0.5) == bce_loss(1, 0.5)
    assert math.isfinite(bce_loss(1, 0.0))


@given(st.floats(1e-6, 1 - 1e-6), st.floats(1e-6, 1 - 1e-6))
def test_bce_monotone(p, q):
    assume(p < q)
    assert bce_loss(1, p) >= bce_loss(1, q)
    assert bce_loss(0, p) <= bce_loss(0, q)


def test_ce_examples():
    assert ce_loss((1, 0), (1, 0)) == pytest.approx(0.0, abs=1e-6)
    assert ce_loss((0, 1), (0.5, 0.5)) == pytest.approx(math.log(2))
    assert ce_loss((1, 0), (0.1, 0.9)) == pytest.approx(2.302585, abs=1e-6)
    with pytest.raises(ValidationError):
        ce_loss((1, 0), (0.3, 0.3))


def bins(pairs, n=17):
    p = np.zeros(n)
    for k, v in pairs:
        p[k] = v
    return DflBins(p)


def test_dfl_examples():
    assert dfl_loss(3.0, bins([(3, 1.0)])) == pytest.approx(0.0, abs=1e-6)
    assert dfl_loss(2.5, bins([(2, 0.5), (3, 0.5)])) == pytest.approx(math.log(2))
    assert dfl_loss(2.25, bins([(2, 0.75), (3, 0.25)])) == pytest.approx(0.5623351446188083, abs=1e-9)
    assert bins([(0, 1.0)]).reg_max == 16
    with pytest.raises(ValidationError):
        dfl_loss(16.5, bins([(16, 1.0)]))
    with pytest.raises(ValidationError):
        dfl_loss(-0.1, bins([(0, 1.0)]))


@given(st.floats(0, 15.999), st.data())
def test_dfl_minimized_by_matching_two_bin_mass(t, data):
    left = math.floor(t)
    wl, wr = left + 1 - t, t - left
    best = bins([(left, wl), (left + 1, wr)] if wr > 0 else [(left, 1.0)])
    raw = np.array(data.draw(st.lists(st.floats(0.0, 1.0), min_size=17, max_size=17)))
    assume(raw.sum() > 1e-3)
    other = DflBins(raw / raw.sum())
    assert dfl_loss(t, best) >= 0.0
    assert dfl_loss(t, other) >= dfl_loss(t, best) - 1e-12


def test_dfl_grad_shape():
    d_probs, d_target = dfl_grad(2.25, bins([(2, 0.75), (3, 0.25)]))
    assert d_probs.shape == (17,)
    assert d_probs[2] == pytest.approx(-0.75 / 0.75)
    assert math.isfinite(d_target)


def test_total_loss():
    assert total_loss(0.5, 0.2, 0.3, LossWeights(0, 0, 0, 0, 0)).total == 0.0
    assert total_loss(0.5, 0.2, 0.3, LossWeights()).total == pytest.approx(1.0)
    assert total_loss(0.5, 0.2, 0.3, LossWeights(), "v11", dfl=0.4).total == pytest.approx(1.4)
    assert total_loss(0.5, 0.2, 0.3, LossWeights(), "v8", dfl=0.0).total == pytest.approx(1.0)
    with pytest.raises(ValidationError):
        total_loss(0.5, 0.2, 0.3, LossWeights(), "v8", dfl=0.4)
    with pytest.raises(ValidationError):
        total_loss(0.5, 0.2, 0.3, LossWeights(), "v5")


def test_weights_validation():
    with pytest.raises(ValidationError):
        LossWeights(lambda_box=-1)
    with pytest.raises(ValidationError):
        LossWeights.from_json({"lambda_typo": 1.0})


def test_tuned_weights_round_trip(tmp_path):
    cfg = tuned_weights_config()
    w = cfg.weights
    assert (w.lambda_cls, w.lambda_box, w.lambda_iou) == (0.1870, 0.1167, 0.2690)
    assert cfg.extras == {"lr0": 0.0159}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg.to_json()))
    assert load_tuning_config(path) == cfg
    assert TuningConfig.from_json(json.loads(json.dumps(cfg.to_json()))).to_json() == cfg.to_json()


def test_mean_loss():
    assert mean_loss(bce_loss, [(1, 0.5), (0, 0.5)]) == pytest.approx(math.log(2))
    assert mean_loss(bce_loss, []) == 0.0


def test_rel_err_metric():
    assert rel_err(np.array([1.0, 2.0]), np.array([1.0, 2.0])) == 0.0
    assert rel_err(np.array([1.0, 0.0]), np.array([1.1, 0.0])) == pytest.approx(0.1 / 1.1)
    assert rel_err(np.zeros(2), np.zeros(2)) == 0.0


def test_random_pairs_are_nondegenerate():
    rng = np.random.default_rng(0)
    for _ in range(100):
        p, g = random_box_pair(rng)
        assert p != g


def test_gradient_suite_small():
    for report in run_all(samples=50, seed=3):
        assert report.samples == 50
        assert report.max_rel_err < REL_TOL, report
    assert STEP == 1e-5
