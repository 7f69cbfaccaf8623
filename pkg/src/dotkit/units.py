"""Fixed physical-unit registry with products, quotients and integer powers.

The registry covers the units this toolbox actually uses (volts, molar
concentrations with SI prefixes, lengths, seconds/hertz, inverse lengths
and their products).  It is intentionally not a general unit-algebra
system: every expression reduces to a scale factor and an exponent vector
over the four base dimensions (length, time, amount of substance,
voltage).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

from .errors import BadUnit, UnitMismatch

# exponents over (metre, second, mole, volt)
_ZERO = (0, 0, 0, 0)

_ATOMS = {
    "unitless": (1.0, _ZERO),
    "1": (1.0, _ZERO),
    "m": (1.0, (1, 0, 0, 0)),
    "s": (1.0, (0, 1, 0, 0)),
    "sec": (1.0, (0, 1, 0, 0)),
    "second": (1.0, (0, 1, 0, 0)),
    "seconds": (1.0, (0, 1, 0, 0)),
    "mol": (1.0, (0, 0, 1, 0)),
    "V": (1.0, (0, 0, 0, 1)),
    "Hz": (1.0, (0, -1, 0, 0)),
    # molar = mol per litre = 1000 mol / m^3
    "M": (1e3, (-3, 0, 1, 0)),
    "molar": (1e3, (-3, 0, 1, 0)),
    "micromolar": (1e-3, (-3, 0, 1, 0)),
}

_PREFIXES = {
    "n": 1e-9,
    "u": 1e-6,
    "µ": 1e-6,
    "m": 1e-3,
    "c": 1e-2,
    "d": 1e-1,
    "k": 1e3,
}

# atoms that accept an SI prefix
_PREFIXABLE = {"m", "s", "M", "mol", "V", "Hz"}

_TOKEN_RE = re.compile(r"\s*([A-Za-zµ]+|\d+|\*\*|[*/^()·.-])")


@dataclass(frozen=True)
class Unit:
    """A resolved unit: scale to coherent SI and base-dimension exponents."""

    scale: float
    dims: tuple[int, int, int, int]
    text: str

    @property
    def is_dimensionless(self) -> bool:
        return self.dims == _ZERO

    def compatible(self, other: "Unit") -> bool:
        return self.dims == other.dims

    def conversion_factor(self, target: "Unit") -> float:
        """Factor f such that magnitude_in_self * f = magnitude_in_target."""
        if self.dims != target.dims:
            raise UnitMismatch(
                f"cannot convert '{self.text}' to '{target.text}'"
            )
        return self.scale / target.scale

    def __mul__(self, other: "Unit") -> "Unit":
        dims = tuple(a + b for a, b in zip(self.dims, other.dims))
        return Unit(self.scale * other.scale, dims, _join(self.text, other.text, "*"))

    def __truediv__(self, other: "Unit") -> "Unit":
        dims = tuple(a - b for a, b in zip(self.dims, other.dims))
        return Unit(self.scale / other.scale, dims, _join(self.text, other.text, "/"))


def _join(a: str, b: str, op: str) -> str:
    if a in ("unitless", "1", ""):
        a = "1"
    if b in ("unitless", "1", ""):
        return a if op == "*" or a != "1" else "unitless"
    return f"{a}{op}({b})" if op == "/" else f"{a}*{b}"


def _resolve_atom(name: str) -> tuple[float, tuple[int, int, int, int]]:
    if name in _ATOMS:
        return _ATOMS[name]
    if len(name) >= 2 and name[0] in _PREFIXES and name[1:] in _PREFIXABLE:
        scale, dims = _ATOMS[name[1:]]
        return (_PREFIXES[name[0]] * scale, dims)
    raise BadUnit(f"unknown unit symbol '{name}'")


class _Parser:
    """Recursive descent over: expr := factor (('*'|'·'|'.'|'/') factor)*
    factor := atom ['^' int | '**' int] | '(' expr ')' | '1'
    """

    def __init__(self, text: str):
        self.tokens = []
        pos = 0
        while pos < len(text):
            m = _TOKEN_RE.match(text, pos)
            if m is None:
                if text[pos:].strip() == "":
                    break
                raise BadUnit(f"cannot tokenize unit expression '{text}'")
            self.tokens.append(m.group(1))
            pos = m.end()
        self.i = 0

    def peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else None

    def next(self):
        tok = self.peek()
        self.i += 1
        return tok

    def parse(self) -> tuple[float, tuple[int, int, int, int]]:
        scale, dims = self.parse_expr()
        if self.peek() is not None:
            raise BadUnit(f"trailing tokens in unit expression: {self.tokens[self.i:]}")
        return scale, dims

    def parse_expr(self):
        scale, dims = self.parse_factor()
        while True:
            tok = self.peek()
            if tok in ("*", "·", "."):
                self.next()
                s2, d2 = self.parse_factor()
                scale *= s2
                dims = tuple(a + b for a, b in zip(dims, d2))
            elif tok == "/":
                self.next()
                s2, d2 = self.parse_factor()
                scale /= s2
                dims = tuple(a - b for a, b in zip(dims, d2))
            elif tok is not None and (tok[0].isalpha() or tok == "("):
                # implicit product, e.g. "M mm"
                s2, d2 = self.parse_factor()
                scale *= s2
                dims = tuple(a + b for a, b in zip(dims, d2))
            else:
                return scale, dims

    def parse_factor(self):
        tok = self.next()
        if tok is None:
            raise BadUnit("empty unit factor")
        if tok == "(":
            scale, dims = self.parse_expr()
            if self.next() != ")":
                raise BadUnit("unbalanced parentheses in unit expression")
        elif tok == "1":
            scale, dims = 1.0, _ZERO
        elif tok[0].isalpha() or tok[0] == "µ":
            scale, dims = _resolve_atom(tok)
        else:
            raise BadUnit(f"unexpected token '{tok}' in unit expression")
        if self.peek() in ("^", "**"):
            self.next()
            exp_tok = self.next()
            sign = 1
            if exp_tok == "-":
                sign = -1
                exp_tok = self.next()
            if exp_tok is None or not exp_tok.isdigit():
                raise BadUnit("unit exponents must be integers")
            exp = sign * int(exp_tok)
            scale = scale**exp
            dims = tuple(d * exp for d in dims)
        return scale, dims


def parse_unit(text: str) -> Unit:
    """Parse a unit expression into a :class:`Unit`.

    Raises :class:`BadUnit` for unknown symbols or non-integer powers.
    """
    if not isinstance(text, str):
        raise BadUnit(f"unit must be a string, got {type(text)!r}")
    stripped = text.strip()
    if stripped in ("", "unitless"):
        return Unit(1.0, _ZERO, "unitless")
    scale, dims = _Parser(stripped).parse()
    if not math.isfinite(scale) or scale <= 0:
        raise BadUnit(f"unit scale must be positive and finite: '{text}'")
    return Unit(scale, dims, stripped)


UNITLESS = parse_unit("unitless")


@dataclass(frozen=True)
class Quantity:
    """A scalar magnitude carrying a physical unit."""

    magnitude: float
    unit: str = "unitless"

    def __post_init__(self):
        parse_unit(self.unit)  # validate eagerly

    @property
    def u(self) -> Unit:
        return parse_unit(self.unit)

    def to(self, target_unit: str) -> "Quantity":
        target = parse_unit(target_unit)
        factor = self.u.conversion_factor(target)
        return Quantity(self.magnitude * factor, target_unit)

    def to_base_magnitude(self) -> float:
        """Magnitude expressed in coherent SI base units."""
        return self.magnitude * self.u.scale

    def __mul__(self, other):
        if isinstance(other, Quantity):
            u = self.u * other.u
            return Quantity(self.magnitude * other.magnitude, u.text)
        return Quantity(self.magnitude * other, self.unit)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Quantity):
            u = self.u / other.u
            return Quantity(self.magnitude / other.magnitude, u.text)
        return Quantity(self.magnitude / other, self.unit)

    def __add__(self, other: "Quantity") -> "Quantity":
        return Quantity(self.magnitude + other.to(self.unit).magnitude, self.unit)

    def __sub__(self, other: "Quantity") -> "Quantity":
        return Quantity(self.magnitude - other.to(self.unit).magnitude, self.unit)

    def __neg__(self):
        return Quantity(-self.magnitude, self.unit)

    def __lt__(self, other: "Quantity"):
        return self.magnitude < other.to(self.unit).magnitude

    def __le__(self, other: "Quantity"):
        return self.magnitude <= other.to(self.unit).magnitude


def parse_quantity(text: str) -> Quantity:
    """Parse strings like ``"22.5 mm"`` or ``"0.5 Hz"`` or ``"3"``."""
    s = str(text).strip()
    m = re.match(r"^([-+0-9.eE]+)\s*(.*)$", s)
    if m is None:
        raise BadUnit(f"cannot parse quantity '{text}'")
    mag = float(m.group(1))
    unit = m.group(2).strip() or "unitless"
    return Quantity(mag, unit)
