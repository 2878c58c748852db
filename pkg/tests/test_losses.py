import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import sddkit as sk
from sddkit.losses import TERM_NAMES


def test_detail_loss_zero_on_agreement():
    rng = np.random.default_rng(0)
    maps = {
        "static": rng.normal(size=(8, 8)),
        "compressed": rng.normal(size=(8, 8)),
        "stretched": rng.normal(size=(8, 8)),
    }
    mask = np.ones((8, 8))
    assert sk.detail_loss(maps, dict(maps), mask) == 0.0


def test_detail_loss_naive_oracle():
    rng = np.random.default_rng(1)
    pred = {k: rng.normal(size=(6, 6)) for k in ("static", "compressed", "stretched")}
    truth = {k: rng.normal(size=(6, 6)) for k in pred}
    mask = rng.uniform(0, 1, (6, 6))
    got = sk.detail_loss(pred, truth, mask)
    want = sum(
        np.sqrt(np.sum((mask * (pred[k] - truth[k])) ** 2)) for k in pred
    )
    assert got == pytest.approx(want, rel=1e-12)
    got_sq = sk.detail_loss(pred, truth, mask, squared=True)
    want_sq = sum(np.sum((mask * (pred[k] - truth[k])) ** 2) for k in pred)
    assert got_sq == pytest.approx(want_sq, rel=1e-12)


def test_detail_loss_mask_zeroes_region():
    rng = np.random.default_rng(2)
    pred = {k: rng.normal(size=(4, 4)) for k in ("static", "compressed", "stretched")}
    truth = {k: rng.normal(size=(4, 4)) for k in pred}
    assert sk.detail_loss(pred, truth, np.zeros((4, 4))) == 0.0


def test_detail_loss_missing_key():
    maps = {"static": np.zeros((4, 4))}
    with pytest.raises(sk.ValidationError):
        sk.detail_loss(maps, maps, np.ones((4, 4)))


def test_vertex_loss_oracle():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(20, 3))
    b = rng.normal(size=(20, 3))
    mask = rng.uniform(0, 1, 20)
    got = sk.vertex_loss(a, b, mask)
    want = np.sqrt(np.sum((mask[:, None] * (a - b)) ** 2))
    assert got == pytest.approx(want, rel=1e-12)
    assert sk.vertex_loss(a, a, mask) == 0.0
    # unmasked variant
    assert sk.vertex_loss(a, b) == pytest.approx(
        np.sqrt(np.sum((a - b) ** 2)), rel=1e-12
    )


def test_kl_coeff_loss_zero_on_equal():
    v = np.array([0.2, -1.0, 3.0, 0.5])
    assert sk.kl_coeff_loss(v, v) == pytest.approx(0.0, abs=1e-15)


def test_kl_coeff_loss_oracle():
    p = np.array([1.0, 2.0, 3.0])
    t = np.array([0.5, 0.5, 2.0])

    def softmax(v):
        e = np.exp(v - v.max())
        return e / e.sum()

    sp, st_ = softmax(p), softmax(t)
    want = float(np.sum(st_ * (np.log(st_) - np.log(sp))))
    assert sk.kl_coeff_loss(p, t) == pytest.approx(want, rel=1e-12)


@given(
    p=st.lists(st.floats(-5.0, 5.0), min_size=4, max_size=4),
    t=st.lists(st.floats(-5.0, 5.0), min_size=4, max_size=4),
)
@settings(max_examples=100, deadline=None)
def test_kl_coeff_loss_nonnegative(p, t):
    assert sk.kl_coeff_loss(np.array(p), np.array(t)) >= -1e-12


def test_photo_loss_oracle():
    rng = np.random.default_rng(4)
    img = rng.uniform(0, 1, (8, 8, 3))
    ren = rng.uniform(0, 1, (8, 8, 3))
    mask = rng.integers(0, 2, (8, 8)).astype(float)
    got = sk.photo_loss(img, ren, mask)
    want = np.sqrt(np.sum((mask[:, :, None] * (img - ren)) ** 2))
    assert got == pytest.approx(want, rel=1e-12)
    assert sk.photo_loss(img, img, mask) == 0.0


def test_identity_loss_cosine():
    a = np.array([1.0, 0.0, 0.0])
    assert sk.identity_loss(a, a) == pytest.approx(0.0, abs=1e-15)
    assert sk.identity_loss(a, -a) == pytest.approx(2.0)
    b = np.array([0.0, 1.0, 0.0])
    assert sk.identity_loss(a, b) == pytest.approx(1.0)
    assert sk.identity_loss(a, 5.0 * a) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(sk.ValidationError):
        sk.identity_loss(a, np.zeros(3))


def test_landmark_loss_hand_value():
    # single landmark, distance 5 (3-4-5 triangle), sigma 1 -> 5 / 2 = 2.5
    detected = np.array([[3.0, 4.0]])
    projected = np.array([[0.0, 0.0]])
    sigma = np.array([1.0])
    assert sk.landmark_loss(detected, sigma, projected) == pytest.approx(2.5)
    # sigma 2 divides by 2 * 4 = 8
    assert sk.landmark_loss(detected, np.array([2.0]), projected) == pytest.approx(
        5.0 / 8.0
    )


def test_landmark_loss_validation():
    with pytest.raises(sk.ValidationError):
        sk.landmark_loss(np.zeros((2, 2)), np.array([1.0, 0.0]), np.zeros((2, 2)))
    with pytest.raises(sk.ValidationError):
        sk.landmark_loss(np.zeros((2, 2)), np.array([1.0]), np.zeros((2, 2)))


def test_kd_loss_one_hot_teacher():
    # one-hot teacher at bin b gives exactly -log student[b]
    student = np.array([0.1, 0.2, 0.3, 0.4])
    teacher = np.array([0.0, 0.0, 1.0, 0.0])
    assert sk.kd_loss(teacher, student) == pytest.approx(-np.log(0.3), rel=1e-12)
    assert sk.kd_loss(student, student) == pytest.approx(0.0, abs=1e-15)


def test_kd_loss_validation():
    with pytest.raises(sk.ValidationError):
        sk.kd_loss(np.array([0.5, 0.6]), np.array([0.5, 0.5]))  # not normalized
    with pytest.raises(sk.ValidationError):
        sk.kd_loss(np.array([0.5, 0.5]), np.array([1.0, 0.0]))  # zero where teacher > 0


def test_reg_loss_scaling(bundle, make_coeffs):
    coeffs = make_coeffs(21)
    base = sk.reg_loss(coeffs)
    doubled = coeffs.replace(
        beta=2.0 * coeffs.beta,
        xi=2.0 * coeffs.xi,
        alpha=2.0 * coeffs.alpha,
        phi=2.0 * coeffs.phi,
    )
    assert sk.reg_loss(doubled) == pytest.approx(4.0 * base, rel=1e-12)


def test_reg_loss_includes_polarized_only_when_present(bundle, make_coeffs):
    coeffs = make_coeffs(22)
    base = sk.reg_loss(coeffs)
    pc = np.ones(bundle.detail.n_compressed)
    ps = np.ones(bundle.detail.n_stretched)
    extended = coeffs.replace(phi_com=pc, phi_str=ps)
    assert sk.reg_loss(extended) == pytest.approx(
        base + pc @ pc + ps @ ps, rel=1e-12
    )


def test_total_loss_landmark_weighting():
    # landmark term 1 with default weights contributes lmk * self_sup = 0.5
    total, breakdown = sk.total_loss({"landmark": 1.0}, sk.LossWeights())
    assert total == pytest.approx(0.5)
    assert breakdown["terms"]["landmark"] == pytest.approx(0.5)


def test_total_loss_breakdown_sums_exactly():
    rng = np.random.default_rng(5)
    terms = {name: float(rng.uniform(0, 2)) for name in TERM_NAMES}
    weights = sk.LossWeights(detail=3.0, shp=0.7, self_sup=1.3, id=0.2, lmk=0.9)
    total, breakdown = sk.total_loss(terms, weights)
    assert total == sum(breakdown["terms"].values())  # bit-exact running sum
    # spot-check the weighted formulas
    assert breakdown["terms"]["detail"] == pytest.approx(3.0 * terms["detail"])
    assert breakdown["terms"]["identity"] == pytest.approx(
        1.3 * 0.2 * terms["identity"]
    )
    assert breakdown["terms"]["kl"] == pytest.approx(0.7 * terms["kl"])


def test_total_loss_missing_terms_zero():
    total, breakdown = sk.total_loss({}, sk.LossWeights())
    assert total == 0.0
    assert set(breakdown["missing"]) == set(TERM_NAMES)
    with pytest.raises(sk.ValidationError):
        sk.total_loss({"bogus": 1.0}, sk.LossWeights())


def test_loss_weights_validation():
    with pytest.raises(sk.ValidationError):
        sk.LossWeights(detail=-1.0)
    w = sk.LossWeights.from_dict({"lmk": 2.0})
    assert w.lmk == 2.0 and w.detail == 10.0


def test_default_embedding_properties():
    rng = np.random.default_rng(6)
    img = rng.uniform(0, 1, (64, 64, 3))
    mask = np.ones((64, 64))
    emb = sk.default_embedding(img, mask)
    assert emb.shape == (256,)
    assert emb.mean() == pytest.approx(0.0, abs=1e-12)
    # masking out the image changes the embedding
    emb2 = sk.default_embedding(img, np.zeros((64, 64)))
    assert not np.allclose(emb, emb2)
