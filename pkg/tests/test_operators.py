from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from p2l.diffmap import DiffMap, materialize_linear
from p2l.errors import DimensionError, ParameterError
from p2l.operators import (KINDS, LinearOperator, OperatorSpec, add_noise, adjoint,
                           dot_product_check, freeform_mask, gaussian_kernel,
                           make_motion_kernel, make_operator, spec_from_dict,
                           spec_to_dict)

DATA = Path(__file__).parent / "data"

ALL_SPECS = [
    OperatorSpec("identity", (8, 8)),
    OperatorSpec("sr_avgpool", (8, 8), factor=2),
    OperatorSpec("gaussian_blur", (8, 8), kernel_size=5, kernel_sigma=1.0),
    OperatorSpec("motion_blur", (8, 8), kernel_size=5, motion_intensity=0.5, seed=3),
    OperatorSpec("inpaint_random", (8, 8), drop_prob=0.5, seed=3),
    OperatorSpec("inpaint_freeform", (8, 8), seed=3),
]


def test_avgpool_block_mean():
    op = make_operator(OperatorSpec("sr_avgpool", (2, 2), factor=2))
    assert op.apply(np.array([1.0, 3.0, 5.0, 7.0])) == pytest.approx([4.0])


def test_blur_delta_kernel_is_identity():
    op = make_operator(OperatorSpec("gaussian_blur", (4, 4), kernel=np.array([[1.0]])))
    x = np.random.default_rng(0).standard_normal(16)
    np.testing.assert_allclose(op.apply(x), x, atol=1e-15)


def test_inpaint_p_zero_is_identity():
    op = make_operator(OperatorSpec("inpaint_random", (4, 4), drop_prob=0.0, seed=1))
    x = np.random.default_rng(0).standard_normal(16)
    np.testing.assert_allclose(op.apply(x), x, atol=1e-15)


def test_make_operator_parameter_errors():
    with pytest.raises(ParameterError):
        make_operator(OperatorSpec("sr_avgpool", (9, 9), factor=2))
    with pytest.raises(ParameterError):
        make_operator(OperatorSpec("gaussian_blur", (8, 8), kernel=np.ones((2, 2)) / 4))
    with pytest.raises(ParameterError):
        make_operator(OperatorSpec("inpaint_random", (8, 8), drop_prob=1.5))
    with pytest.raises(ParameterError):
        make_operator(OperatorSpec("no_such_kind", (8, 8)))


def test_adjoint_avgpool_distributes():
    op = make_operator(OperatorSpec("sr_avgpool", (2, 2), factor=2))
    np.testing.assert_allclose(adjoint(op, np.array([4.0])), np.ones(4), atol=1e-15)


def test_adjoint_mask_transpose():
    mask = np.array([[True, False]])
    op = make_operator(OperatorSpec("inpaint_freeform", (1, 2), mask=mask))
    np.testing.assert_allclose(adjoint(op, np.array([5.0])), [5.0, 0.0], atol=1e-15)


def test_adjoint_blur_matches_dense_transpose():
    # materialize A on an 8x8 image and compare against A^T u
    op = make_operator(OperatorSpec("gaussian_blur", (8, 8), kernel_size=3,
                                    kernel_sigma=0.8))
    a = materialize_linear(op.map)
    rng = np.random.default_rng(1)
    u = rng.standard_normal(op.output_shape)
    np.testing.assert_allclose(adjoint(op, u), a.T @ u, rtol=1e-12, atol=1e-12)


def test_dot_product_check_identity():
    op = make_operator(OperatorSpec("identity", (8, 8)))
    assert dot_product_check(op, trials=100, seed=0) <= 1e-12


@pytest.mark.parametrize("spec", ALL_SPECS, ids=[s.kind for s in ALL_SPECS])
def test_dot_product_check_all_kinds(spec):
    assert dot_product_check(make_operator(spec), trials=100, seed=0) <= 1e-8


def test_dot_product_check_flags_corrupted_adjoint():
    op = make_operator(OperatorSpec("gaussian_blur", (8, 8), kernel_size=5,
                                    kernel_sigma=1.0))
    bad_map = DiffMap(op.map.input_shape, op.map.output_shape, op.map.forward,
                      lambda x, u: 1.01 * op.map.vjp(x, u), name="bad")
    bad = LinearOperator(op.kind, op.image_shape, bad_map, kernel=op.kernel)
    assert dot_product_check(bad, trials=100, seed=0) > 1e-3


@pytest.mark.parametrize("spec", ALL_SPECS, ids=[s.kind for s in ALL_SPECS])
def test_forward_linearity(spec):
    op = make_operator(spec)
    rng = np.random.default_rng(7)
    x = rng.standard_normal(op.input_shape)
    z = rng.standard_normal(op.input_shape)
    a, b = 1.7, -0.3
    left = op.apply(a * x + b * z)
    right = a * op.apply(x) + b * op.apply(z)
    np.testing.assert_allclose(left, right, rtol=1e-10, atol=1e-12)


def test_inpaint_rows_orthonormal():
    op = make_operator(OperatorSpec("inpaint_random", (8, 8), drop_prob=0.8, seed=1))
    m = op.output_shape[0]
    aat = np.stack([op.apply(adjoint(op, e)) for e in np.eye(m)])
    np.testing.assert_allclose(aat, np.eye(m), atol=1e-14)


def test_blur_commutes_with_interior_shift():
    op = make_operator(OperatorSpec("gaussian_blur", (32, 32), kernel_size=5,
                                    kernel_sigma=1.0))
    rng = np.random.default_rng(3)
    img = rng.standard_normal((32, 32))
    shifted = np.roll(img, (1, 1), axis=(0, 1))
    blur_then_shift = np.roll(op.apply(img.ravel()).reshape(32, 32), (1, 1), axis=(0, 1))
    shift_then_blur = op.apply(shifted.ravel()).reshape(32, 32)
    margin = 4  # kernel radius + shift
    inner = (slice(margin, -margin),) * 2
    np.testing.assert_allclose(shift_then_blur[inner], blur_then_shift[inner],
                               atol=1e-10)


# -- noise ------------------------------------------------------------------

def test_add_noise_sigma_zero_exact():
    y = np.array([1.0, -2.0, 3.0])
    m = add_noise(y, 0.0, seed=5)
    np.testing.assert_array_equal(m.y, y)


def test_add_noise_same_seed_identical():
    y = np.random.default_rng(0).standard_normal(100)
    a = add_noise(y, 0.1, seed=42)
    b = add_noise(y, 0.1, seed=42)
    np.testing.assert_array_equal(a.y, b.y)


def test_add_noise_sample_std_within_chi_square_bounds():
    y = np.zeros(10_000)
    m = add_noise(y, 0.01, seed=11)
    std = float(np.std(m.y - y, ddof=1))
    assert 0.0097 <= std <= 0.0103


def test_add_noise_negative_sigma_rejected():
    with pytest.raises(ParameterError):
        add_noise(np.zeros(4), -0.1, seed=0)


# -- kernels and masks ------------------------------------------------------

def test_motion_kernel_intensity_zero_single_row():
    k = make_motion_kernel(9, 0.0, seed=42)
    rows_with_mass = np.unique(np.nonzero(k)[0])
    assert rows_with_mass.tolist() == [4]
    assert k.sum() == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_motion_kernel_normalized(seed):
    k = make_motion_kernel(9, 0.5, seed=seed)
    assert k.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(k >= 0)


def test_motion_kernel_golden_snapshot():
    k = make_motion_kernel(9, 0.5, seed=0)
    golden = np.load(DATA / "motion_kernel_9_i05_seed0.npy")
    np.testing.assert_allclose(k, golden, atol=1e-12)


def test_motion_kernel_even_size_rejected():
    with pytest.raises(ParameterError):
        make_motion_kernel(8, 0.5, seed=0)


def test_gaussian_kernel_normalized_and_symmetric():
    k = gaussian_kernel(9, 1.5)
    assert k.sum() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(k, k.T, atol=1e-15)
    np.testing.assert_allclose(k, k[::-1, ::-1], atol=1e-15)


def test_freeform_mask_coverage():
    mask = freeform_mask((32, 32), coverage=(0.10, 0.20), seed=9)
    dropped = 1.0 - mask.mean()
    assert 0.10 <= dropped <= 0.25  # one stroke may overshoot slightly


def test_freeform_mask_deterministic():
    a = freeform_mask((16, 16), seed=4)
    b = freeform_mask((16, 16), seed=4)
    np.testing.assert_array_equal(a, b)


# -- serialization ----------------------------------------------------------

@pytest.mark.parametrize("spec", ALL_SPECS, ids=[s.kind for s in ALL_SPECS])
def test_spec_roundtrip_rebuilds_same_operator(spec):
    back = spec_from_dict(spec_to_dict(spec))
    op1 = make_operator(spec)
    op2 = make_operator(back)
    x = np.random.default_rng(0).standard_normal(op1.input_shape)
    np.testing.assert_allclose(op1.apply(x), op2.apply(x), atol=1e-15)


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=0, max_value=1000), st.floats(0.0, 1.0))
def test_motion_kernel_properties(seed, intensity):
    k = make_motion_kernel(7, intensity, seed=seed)
    assert k.shape == (7, 7)
    assert np.all(k >= 0)
    assert abs(k.sum() - 1.0) <= 1e-12
