import json
import subprocess
import sys

import numpy as np
import pytest

from iboss_clr.core import (
    ClrParams,
    CsvFormatError,
    Dataset,
    InvalidParamsError,
    RngSpec,
    SelectionResult,
    block_slices,
    param_dim,
    read_csv,
    theta_flatten,
    theta_unflatten,
    validate_params,
    write_csv,
)

from conftest import random_params


def test_single_expert_is_valid():
    p = ClrParams([[0.0, 0.0]], [1.0], [1.0])
    assert validate_params(p) is p


def test_pi_not_on_simplex():
    with pytest.raises(InvalidParamsError, match="π does not sum to 1"):
        validate_params(ClrParams([[0, 0], [1, 1]], [1, 1], [0.6, 0.5]))


def test_negative_variance():
    with pytest.raises(InvalidParamsError, match="σ² not positive"):
        validate_params(ClrParams([[0, 0], [1, 1]], [1.0, -0.1], [0.5, 0.5]))


def test_variance_below_floor():
    with pytest.raises(InvalidParamsError, match="floor"):
        validate_params(ClrParams([[0, 0]], [1e-12], [1.0]))


def test_nonpositive_pi():
    with pytest.raises(InvalidParamsError, match="π not positive"):
        validate_params(ClrParams([[0, 0], [1, 1]], [1, 1], [1.0, 0.0]))


def test_shape_mismatch():
    with pytest.raises(InvalidParamsError, match="dimension mismatch"):
        ClrParams([[0, 0], [1, 1]], [1.0], [0.5, 0.5])


@pytest.mark.parametrize("g,p,d", [(1, 1, 3), (2, 1, 7), (5, 10, 64)])
def test_theta_length(g, p, d):
    params = ClrParams(np.zeros((g, p + 1)), np.ones(g), np.full(g, 1.0 / g))
    assert param_dim(g, p) == d
    assert theta_flatten(params).shape == (d,)


def test_theta_layout_and_roundtrip(rng):
    for g, p in [(1, 1), (2, 3), (3, 2), (5, 10)]:
        params = random_params(rng, g, p)
        theta = theta_flatten(params)
        q = p + 1
        np.testing.assert_array_equal(theta[:q], params.beta[0])
        np.testing.assert_array_equal(theta[g * q:g * q + g], params.sigma2)
        np.testing.assert_array_equal(theta[g * q + g:], params.pi[:-1])
        back = theta_unflatten(theta, g, p)
        # pi_G is not stored; it is rebuilt as 1 - sum and can differ by one ulp
        np.testing.assert_array_equal(back.beta, params.beta)
        np.testing.assert_array_equal(back.sigma2, params.sigma2)
        np.testing.assert_array_equal(back.pi[:-1], params.pi[:-1])
        assert abs(back.pi[-1] - params.pi[-1]) <= 4 * np.finfo(float).eps
        np.testing.assert_array_equal(theta_flatten(back), theta)
        assert theta_unflatten(theta_flatten(back), g, p) == back
        sl = block_slices(g, p)
        assert len(sl["beta"]) == g and len(sl["pi"]) == g - 1


def test_theta_unflatten_recovers_last_pi():
    back = theta_unflatten(np.array([0, 1, 2, 3, 1, 1, 0.3]), 2, 1)
    np.testing.assert_allclose(back.pi, [0.3, 0.7])


def test_dataset_rejects_nonfinite():
    with pytest.raises(ValueError, match="non-finite"):
        Dataset(np.array([[1.0], [np.nan]]), np.array([0.0, 1.0]))
    with pytest.raises(ValueError, match="non-finite"):
        Dataset(np.array([[1.0], [2.0]]), np.array([0.0, np.inf]))


def test_dataset_is_read_only_and_design_is_derived():
    d = Dataset(np.arange(6.0).reshape(3, 2), np.arange(3.0))
    with pytest.raises(ValueError):
        d.z[0, 0] = 5.0
    X = d.design([2, 0])
    np.testing.assert_array_equal(X, [[1, 4, 5], [1, 0, 1]])
    assert d.column(1).flags["C_CONTIGUOUS"]


def test_selection_result_contract():
    s = SelectionResult([0, 3, 7], "iboss")
    assert s.to_dict() == {"method": "iboss", "k": 3, "indices": [0, 3, 7]}
    assert SelectionResult.from_dict(json.loads(json.dumps(s.to_dict()))).k == 3
    with pytest.raises(ValueError):
        SelectionResult([3, 3], "random")
    with pytest.raises(ValueError):
        SelectionResult([0], "bogus")


def test_rng_streams_reproducible_and_distinct():
    a = RngSpec(7, 1).generator(3).standard_normal(5)
    b = RngSpec(7, 1).generator(3).standard_normal(5)
    c = RngSpec(7, 2).generator(3).standard_normal(5)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)


def test_rng_identical_across_processes():
    code = "from iboss_clr.core import RngSpec; print(RngSpec(99, 4).generator(1).integers(0, 2**62, 4).tolist())"
    outs = [subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, check=True).stdout
            for _ in range(2)]
    assert outs[0] == outs[1]
    local = RngSpec(99, 4).generator(1).integers(0, 2**62, 4).tolist()
    assert outs[0].strip() == str(local)


def test_csv_roundtrip(tmp_path, rng):
    d = Dataset(rng.normal(size=(20, 3)), rng.normal(size=20), ("a", "b", "c"))
    path = tmp_path / "d.csv"
    write_csv(path, d)
    back = read_csv(path)
    np.testing.assert_array_equal(back.z, d.z)
    np.testing.assert_array_equal(back.y, d.y)
    assert back.columns == ("a", "b", "c")


def test_csv_response_column_anywhere(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("out,z1,z2\n1,2,3\n4,5,6\n")
    d = read_csv(path, response="out")
    np.testing.assert_array_equal(d.y, [1, 4])
    np.testing.assert_array_equal(d.z, [[2, 3], [5, 6]])


def test_csv_missing_response(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(KeyError, match="'y'"):
        read_csv(path)


def test_csv_parse_error_coordinates(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("z1,y\n1,2\n3,oops\n")
    with pytest.raises(CsvFormatError, match="row 3, column 2"):
        read_csv(path)
