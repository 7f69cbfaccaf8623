import math

import pytest
from hypothesis import given, strategies as st

from dotkit.errors import BadUnit, UnitMismatch
from dotkit.units import Quantity, parse_quantity, parse_unit


def test_simple_units_parse():
    for text in ["V", "unitless", "uM", "µM", "mm", "cm", "s", "Hz", "M", "mol",
                 "1/mm", "1/(M*mm)", "1/(M·mm)", "mm*M", "m/s", "s^2", "uM**2"]:
        parse_unit(text)


def test_bad_units_rejected():
    with pytest.raises(BadUnit):
        parse_unit("furlongs^½")
    with pytest.raises(BadUnit):
        parse_unit("parsec")
    with pytest.raises(BadUnit):
        parse_unit("mm^(1/2)")


def test_mm_to_cm_exact():
    q = Quantity(15, "mm")
    assert q.to("cm").magnitude == 1.5
    assert Quantity(1.5, "cm").to("mm").magnitude == 15.0


def test_micromolar_aliases():
    assert parse_unit("uM").scale == parse_unit("µM").scale
    assert parse_unit("uM").dims == parse_unit("M").dims
    assert parse_unit("micromolar").scale == parse_unit("uM").scale


def test_incompatible_conversion_raises():
    with pytest.raises(UnitMismatch):
        Quantity(1, "V").to("uM")


def test_extinction_unit_dimensionality():
    # 1/(M*mm) * M * mm must be dimensionless
    u = parse_unit("1/(M*mm)") * parse_unit("M") * parse_unit("mm")
    assert u.is_dimensionless
    assert u.scale == pytest.approx(1.0)


def test_quantity_arithmetic():
    assert (Quantity(1, "cm") + Quantity(5, "mm")).magnitude == pytest.approx(1.5)
    assert (Quantity(2, "s") * Quantity(3, "Hz")).u.is_dimensionless
    assert Quantity(15, "mm") <= Quantity(1.5, "cm")
    assert not (Quantity(16, "mm") <= Quantity(1.5, "cm"))


def test_parse_quantity_strings():
    q = parse_quantity("22.5 mm")
    assert q.magnitude == 22.5 and q.unit == "mm"
    assert parse_quantity("0.5 Hz").unit == "Hz"
    assert parse_quantity("3").unit == "unitless"


@given(st.floats(min_value=1e-12, max_value=1e12,
                 allow_nan=False, allow_infinity=False),
       st.sampled_from([("mm", "cm"), ("mm", "m"), ("uM", "M"),
                        ("s", "Hz"), ("nM", "uM")]))
def test_round_trip_conversion_within_one_ulp(mag, pair):
    a, b = pair
    if a == "s" and b == "Hz":
        return  # different dimensionality on purpose
    back = Quantity(mag, a).to(b).to(a).magnitude
    assert back == pytest.approx(mag, rel=4 * math.ulp(1.0))
