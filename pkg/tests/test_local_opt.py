import numpy as np
import pytest

from parablock.errors import NumericError
from parablock.local_opt import AdamWConfig, OptimizerState, SgdConfig, adamw_step, make_stepper, sgd_step


def test_sgd_examples():
    assert sgd_step(np.array([1.0]), np.array([1.0]), SgdConfig(0.1)).tolist() == [0.9]
    th = np.array([1.0, 2.0])
    assert np.array_equal(sgd_step(th, np.zeros(2), SgdConfig(0.1)), th)
    assert sgd_step(th, np.array([2.0, -2.0]), SgdConfig(0.5)).tolist() == [0.0, 3.0]


def test_sgd_rejects_non_finite():
    with pytest.raises(NumericError):
        sgd_step(np.ones(1), np.array([np.inf]), SgdConfig(0.1))
    with pytest.raises(NumericError):
        sgd_step(np.array([1e308]), np.array([-1e308]), SgdConfig(10.0))


def test_adamw_first_step():
    th, st = adamw_step(np.array([1.0]), np.array([2.0]), OptimizerState.zeros(1), AdamWConfig(0.1))
    assert th[0] == pytest.approx(1.0 - 0.1 * 2 / (2 + 1e-6), rel=1e-15)
    assert 1.0 - th[0] == pytest.approx(0.09999995, abs=1e-10)
    assert st.step_count == 1


def test_adamw_eps_inside_sqrt():
    th, _ = adamw_step(np.array([1.0]), np.array([2.0]), OptimizerState.zeros(1),
                       AdamWConfig(0.1, eps_inside_sqrt=True))
    assert th[0] == pytest.approx(1.0 - 0.1 * 2 / np.sqrt(4 + 1e-6), rel=1e-15)


def test_adamw_zero_gradient_fresh_state():
    th = np.array([0.3, -2.0])
    out, _ = adamw_step(th, np.zeros(2), OptimizerState.zeros(2), AdamWConfig(0.1))
    assert np.array_equal(out, th)


@pytest.mark.parametrize("bias_correction", [True, False])
def test_adamw_sign_limit(bias_correction):
    g = np.array([3.0, -0.5, 0.0])
    cfg = AdamWConfig(0.1, beta1=0.0, beta2=0.0, epsilon=0.25, bias_correction=bias_correction)
    st = OptimizerState.zeros(3)
    th = np.zeros(3)
    for _ in range(3):
        new, st = adamw_step(th, g, st, cfg)
        assert np.allclose(new - th, -0.1 * g / (np.abs(g) + 0.25), rtol=1e-15, atol=0)
        th = new


def test_adamw_decoupled_weight_decay():
    th = np.array([2.0])
    out, _ = adamw_step(th, np.zeros(1), OptimizerState.zeros(1), AdamWConfig(0.1, weight_decay=0.5))
    assert out[0] == pytest.approx(2.0 - 0.1 * 0.5 * 2.0)


def test_adamw_matches_reference_loop():
    rng = np.random.default_rng(3)
    cfg = AdamWConfig(0.01, beta1=0.8, beta2=0.95, epsilon=1e-8, weight_decay=0.1)
    th, st = rng.standard_normal(5), OptimizerState.zeros(5)
    m = v = np.zeros(5)
    ref = th.copy()
    for k in range(1, 8):
        g = rng.standard_normal(5)
        th, st = adamw_step(th, g, st, cfg)
        m = 0.8 * m + 0.2 * g
        v = 0.95 * v + 0.05 * g * g
        mh, vh = m / (1 - 0.8 ** k), v / (1 - 0.95 ** k)
        ref = ref - 0.01 * (mh / (np.sqrt(vh) + 1e-8) + 0.1 * ref)
    assert np.allclose(th, ref, rtol=1e-13, atol=0)


def test_stepper_state_is_fresh():
    cfg = AdamWConfig(0.1)
    g = np.array([1.0])
    s1, s2 = make_stepper(cfg, 1), make_stepper(cfg, 1)
    a = s1(np.zeros(1), g)
    assert np.array_equal(a, s2(np.zeros(1), g))


@pytest.mark.parametrize("kw", [dict(eta_l=0), dict(eta_l=0.1, beta1=1.0), dict(eta_l=0.1, epsilon=0),
                                dict(eta_l=0.1, weight_decay=-1)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        AdamWConfig(**kw)
    with pytest.raises(ValueError):
        SgdConfig(0.0)


def test_adamw_state_shape_mismatch():
    with pytest.raises(ValueError):
        adamw_step(np.ones(2), np.ones(2), OptimizerState.zeros(3), AdamWConfig(0.1))
