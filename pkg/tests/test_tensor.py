import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dotkit.errors import (
    CoordMismatch,
    DimMismatch,
    DuplicateDim,
    BadUnit,
    UnalignedSelector,
    UnitMismatch,
    UnknownCoord,
    UnknownDim,
)
from dotkit.tensor import (
    LabeledTensor,
    binary_op,
    build_labeled_tensor,
    concat_tensors,
    stack_tensors,
)
from dotkit.units import Quantity


def make_ct(data=None):
    """A (channel: 2, time: 4) tensor with channel/source/detector coords."""
    if data is None:
        data = np.arange(8, dtype=float).reshape(2, 4)
    return LabeledTensor(
        ("channel", "time"),
        data,
        {
            "channel": ("channel", ["S1D1", "S1D2"]),
            "source": ("channel", ["S1", "S1"]),
            "detector": ("channel", ["D1", "D2"]),
            "time": ("time", [0.0, 0.5, 1.0, 1.5]),
        },
        "V",
    )


class TestBuild:
    def test_valid_tensor(self):
        t = build_labeled_tensor(
            ["time"], [3], [0, 1, 2], {"time": [0.0, 0.5, 1.0]}, "V"
        )
        assert t.sizes == {"time": 3}
        assert t.unit == "V"

    def test_coord_length_mismatch(self):
        with pytest.raises(DimMismatch):
            build_labeled_tensor(["time"], [3], [0, 1, 2], {"time": [0.0, 0.5]}, "V")

    def test_bad_unit(self):
        with pytest.raises(BadUnit):
            build_labeled_tensor(["time"], [1], [0], {}, "furlongs^½")

    def test_duplicate_dim(self):
        with pytest.raises(DuplicateDim):
            LabeledTensor(("a", "a"), np.zeros((2, 2)))

    def test_data_length_mismatch(self):
        with pytest.raises(DimMismatch):
            build_labeled_tensor(["a"], [3], [1, 2], {}, "V")

    def test_immutable(self):
        t = make_ct()
        with pytest.raises(ValueError):
            t.data[0, 0] = 99.0


class TestSelect:
    def test_value_set(self):
        t = make_ct()
        sub = t.select("channel", {"S1D1"})
        assert sub.sizes == {"channel": 1, "time": 4}
        assert list(sub.coord_values("channel")) == ["S1D1"]
        assert list(sub.coord_values("detector")) == ["D1"]

    def test_all_true_mask_is_identity(self):
        t = make_ct()
        mask = LabeledTensor(
            ("channel",), np.ones(2), {"channel": ("channel", ["S1D1", "S1D2"])}
        )
        sub = t.select("channel", mask)
        assert np.array_equal(sub.data, t.data)
        assert sub.dims == t.dims

    def test_time_range_first_kept_index(self):
        # timestamps 0..2017 step 0.2294: range [5, 315] starts at index 22
        step = 0.2294
        times = np.arange(0, 2017, step)
        t = LabeledTensor(("time",), np.arange(len(times), dtype=float),
                          {"time": ("time", times)}, "V")
        sub = t.select("time", slice(5, 315))
        assert sub.data[0] == np.ceil(5 / step)
        assert sub.coord_values("time")[0] >= 5
        assert sub.coord_values("time")[-1] <= 315

    def test_unknown_coord(self):
        with pytest.raises(UnknownCoord):
            make_ct().select("nope", {"x"})

    def test_unaligned_selector(self):
        t = make_ct()
        bad = LabeledTensor(("channel",), np.ones(3),
                            {"channel": ("channel", ["a", "b", "c"])})
        with pytest.raises(UnalignedSelector):
            t.select("channel", bad)


class TestReduce:
    def test_mean(self):
        t = build_labeled_tensor(["time"], [3], [1, 2, 3], {}, "V")
        assert t.reduce("time", "mean").item() == 2.0

    def test_all(self):
        t = build_labeled_tensor(["time"], [3], [1, 1, 0], {})
        assert t.reduce("time", "all").item() == 0.0
        assert t.reduce("time", "any").item() == 1.0
        assert t.reduce("time", "all").unit == "unitless"

    def test_std_of_constant_is_zero(self):
        t = build_labeled_tensor(["time"], [3], [1, 1, 1], {}, "V")
        assert t.reduce("time", "std").item() == 0.0

    def test_std_unbiased(self):
        t = build_labeled_tensor(["time"], [4], [1, 2, 3, 4], {})
        assert t.reduce("time", "std").item() == pytest.approx(
            np.std([1, 2, 3, 4], ddof=1)
        )

    def test_unknown_dim(self):
        with pytest.raises(UnknownDim):
            make_ct().reduce("nope", "mean")

    def test_skipna(self):
        t = build_labeled_tensor(["time"], [3], [1.0, np.nan, 3.0], {})
        assert np.isnan(t.reduce("time", "mean").item())
        assert t.reduce("time", "mean", skipna=True).item() == 2.0

    def test_reduce_all_matches_brute_force(self):
        rng = np.random.default_rng(7)
        data = (rng.random((3, 4, 5)) > 0.4).astype(float)
        t = LabeledTensor(("a", "b", "c"), data)
        got = t.reduce("b", "all").bool_values
        expect = np.empty((3, 5), dtype=bool)
        for i in range(3):
            for k in range(5):
                acc = True
                for j in range(4):
                    acc = acc and bool(data[i, j, k])
                expect[i, k] = acc
        assert np.array_equal(got, expect)


class TestBinaryOps:
    def test_unit_converted_comparison(self):
        distances = build_labeled_tensor(
            ["channel"], [3], [1.0, 2.0, 3.0],
            {"channel": ["a", "b", "c"]}, "cm",
        )
        is_short = distances <= Quantity(15, "mm")
        assert is_short.unit == "unitless"
        assert list(is_short.bool_values) == [True, False, False]
        # channel coord survives for later selection
        assert list(is_short.coord_values("channel")) == ["a", "b", "c"]

    def test_add_zero_identity(self):
        t = make_ct()
        zero = t.with_data(np.zeros_like(t.data))
        assert np.array_equal((t + zero).data, t.data)

    def test_unit_mismatch(self):
        a = build_labeled_tensor(["t"], [1], [1], {}, "V")
        b = build_labeled_tensor(["t"], [1], [1], {}, "uM")
        with pytest.raises(UnitMismatch):
            binary_op(a, b, "add")

    def test_conflicting_coords(self):
        a = build_labeled_tensor(["t"], [2], [1, 2], {"t": [0.0, 1.0]}, "V")
        b = build_labeled_tensor(["t"], [2], [1, 2], {"t": [0.0, 2.0]}, "V")
        with pytest.raises(CoordMismatch):
            binary_op(a, b, "add")

    def test_mul_combines_units(self):
        a = build_labeled_tensor(["t"], [1], [2], {}, "mm")
        b = build_labeled_tensor(["t"], [1], [3], {}, "1/(M*mm)")
        c = binary_op(a, b, "mul")
        from dotkit.units import parse_unit

        assert parse_unit(c.unit).dims == parse_unit("1/M").dims

    def test_shared_dim_size_conflict(self):
        a = build_labeled_tensor(["t"], [2], [1, 2], {})
        b = build_labeled_tensor(["t"], [3], [1, 2, 3], {})
        with pytest.raises(DimMismatch):
            binary_op(a, b, "add")


@settings(max_examples=60, deadline=None)
@given(
    st.sampled_from(["add", "sub", "mul"]),
    st.integers(1, 3), st.integers(1, 3), st.integers(1, 3),
    st.booleans(), st.booleans(), st.booleans(),
)
def test_broadcasting_matches_nested_loop_oracle(op, na, nb, nc, ka, kb, kc):
    """binary_op over dims subsets equals an explicit nested loop."""
    rng = np.random.default_rng(na * 100 + nb * 10 + nc + ka * 7 + kb * 3 + kc)
    dims_a = tuple(d for d, k in zip("abc", (ka, kb, kc)) if k) or ("a",)
    sizes = {"a": na, "b": nb, "c": nc}
    a_shape = tuple(sizes[d] for d in dims_a)
    a = LabeledTensor(dims_a, rng.random(a_shape))
    b = LabeledTensor(("a", "b", "c"), rng.random((na, nb, nc)))
    out = binary_op(a, b, op)
    assert set(out.dims) == {"a", "b", "c"}
    f = {"add": lambda x, y: x + y, "sub": lambda x, y: x - y,
         "mul": lambda x, y: x * y}[op]
    for i, j, k in itertools.product(range(na), range(nb), range(nc)):
        idx_a = tuple({"a": i, "b": j, "c": k}[d] for d in dims_a)
        idx_out = tuple({"a": i, "b": j, "c": k}[d] for d in out.dims)
        assert out.data[idx_out] == pytest.approx(f(a.data[idx_a], b.data[i, j, k]))


def test_select_reduce_commute_on_distinct_dims():
    t = make_ct()
    a = t.select("channel", {"S1D2"}).reduce("time", "mean")
    b = t.reduce("time", "mean").select("channel", {"S1D2"})
    assert np.array_equal(a.data, b.data)


def test_stack_and_concat():
    t = make_ct()
    stacked = stack_tensors([t, t], "epoch", {"trial_type": ["x", "y"]})
    assert stacked.sizes == {"epoch": 2, "channel": 2, "time": 4}
    assert list(stacked.coord_values("trial_type")) == ["x", "y"]
    joined = concat_tensors([t, t], "time")
    assert joined.sizes == {"channel": 2, "time": 8}
