"""Sparse multivariate polynomials over a fixed variable list.

Variable 0 is time ``t``; variables 1..n are the states.  Polynomials are
immutable: every operation returns a new object.  Coefficients are floats and
terms whose magnitude drops below ``DROP_TOL`` are discarded after arithmetic.
"""

from __future__ import annotations

import math
from itertools import combinations_with_replacement
from typing import Iterable, Mapping, Sequence

import numpy as np

DROP_TOL = 1e-14

Monomial = tuple  # exponent tuple, one entry per variable


def _canonical(terms: Mapping[tuple, float]) -> dict:
    return {e: float(c) for e, c in terms.items() if abs(c) >= DROP_TOL}


class Polynomial:
    """Immutable sparse polynomial ``sum c_e z**e``."""

    __slots__ = ("nvars", "_terms", "_cache")

    def __init__(self, nvars: int, terms: Mapping[tuple, float] | None = None):
        if nvars < 1:
            raise ValueError("nvars must be positive")
        self.nvars = int(nvars)
        terms = terms or {}
        for e in terms:
            if len(e) != self.nvars:
                raise ValueError(f"exponent {e} does not match nvars={nvars}")
            if any(k < 0 for k in e):
                raise ValueError(f"negative exponent in {e}")
        self._terms = _canonical({tuple(int(k) for k in e): c for e, c in terms.items()})
        self._cache = None

    # -- constructors -----------------------------------------------------
    @classmethod
    def zero(cls, nvars: int) -> "Polynomial":
        return cls(nvars)

    @classmethod
    def constant(cls, nvars: int, value: float) -> "Polynomial":
        return cls(nvars, {(0,) * nvars: value})

    @classmethod
    def variable(cls, nvars: int, index: int) -> "Polynomial":
        if not 0 <= index < nvars:
            raise IndexError(f"variable {index} out of range for nvars={nvars}")
        e = [0] * nvars
        e[index] = 1
        return cls(nvars, {tuple(e): 1.0})

    @classmethod
    def monomial(cls, nvars: int, exponents: Sequence[int], coeff: float = 1.0) -> "Polynomial":
        return cls(nvars, {tuple(exponents): coeff})

    @classmethod
    def from_coefficients(cls, nvars: int, basis: Sequence[tuple], coeffs: Iterable[float]) -> "Polynomial":
        terms: dict = {}
        for e, c in zip(basis, coeffs):
            terms[e] = terms.get(e, 0.0) + float(c)
        return cls(nvars, terms)

    @classmethod
    def univariate(cls, nvars: int, index: int, coeffs: Sequence[float]) -> "Polynomial":
        """``sum_k coeffs[k] * z_index**k``."""
        terms = {}
        for k, c in enumerate(coeffs):
            e = [0] * nvars
            e[index] = k
            terms[tuple(e)] = c
        return cls(nvars, terms)

    # -- basic properties -------------------------------------------------
    @property
    def terms(self) -> dict:
        return dict(self._terms)

    def items(self):
        return self._terms.items()

    def __len__(self) -> int:
        return len(self._terms)

    def is_zero(self) -> bool:
        return not self._terms

    @property
    def degree(self) -> int:
        """Total degree; -1 for the zero polynomial."""
        if not self._terms:
            return -1
        return max(sum(e) for e in self._terms)

    def degree_in(self, var: int) -> int:
        if not self._terms:
            return -1
        return max(e[var] for e in self._terms)

    def coefficient(self, exponents: Sequence[int]) -> float:
        return self._terms.get(tuple(exponents), 0.0)

    def coeff_norm(self, ord: float = 1) -> float:
        if not self._terms:
            return 0.0
        return float(np.linalg.norm(np.fromiter(self._terms.values(), float), ord))

    def _arrays(self):
        if self._cache is None:
            if self._terms:
                exps = np.array(list(self._terms.keys()), dtype=np.int64)
                coeffs = np.fromiter(self._terms.values(), float, len(self._terms))
            else:
                exps = np.zeros((0, self.nvars), dtype=np.int64)
                coeffs = np.zeros(0)
            self._cache = (exps, coeffs)
        return self._cache

    # -- arithmetic -------------------------------------------------------
    def _coerce(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            if other.nvars != self.nvars:
                raise ValueError(f"variable-count mismatch: {self.nvars} vs {other.nvars}")
            return other
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Polynomial.constant(self.nvars, float(other))
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out = dict(self._terms)
        for e, c in other._terms.items():
            out[e] = out.get(e, 0.0) + c
        return Polynomial(self.nvars, out)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self.nvars, {e: -c for e, c in self._terms.items()})

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return other + (-self)

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Polynomial(self.nvars, {e: c * other for e, c in self._terms.items()})
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out: dict = {}
        for e1, c1 in self._terms.items():
            for e2, c2 in other._terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                out[e] = out.get(e, 0.0) + c1 * c2
        return Polynomial(self.nvars, out)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        if not isinstance(scalar, (int, float, np.floating, np.integer)):
            return NotImplemented
        return self * (1.0 / scalar)

    def __pow__(self, k: int):
        if int(k) != k or k < 0:
            raise ValueError("only non-negative integer powers")
        result = Polynomial.constant(self.nvars, 1.0)
        base = self
        k = int(k)
        while k:
            if k & 1:
                result = result * base
            k >>= 1
            if k:
                base = base * base
        return result

    def __eq__(self, other):
        if isinstance(other, (int, float)):
            other = Polynomial.constant(self.nvars, other)
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.nvars == other.nvars and self._terms == other._terms

    def __hash__(self):
        return hash((self.nvars, frozenset(self._terms.items())))

    def allclose(self, other: "Polynomial", atol: float = 1e-12) -> bool:
        diff = self - other
        return all(abs(c) <= atol for c in diff._terms.values())

    def __repr__(self):
        if not self._terms:
            return f"Polynomial({self.nvars}, 0)"
        parts = []
        for e in sorted(self._terms, key=grlex_key):
            mono = "*".join(f"z{i}^{k}" if k > 1 else f"z{i}" for i, k in enumerate(e) if k)
            parts.append(f"{self._terms[e]:+.6g}" + (f"*{mono}" if mono else ""))
        return f"Polynomial({self.nvars}, {' '.join(parts)})"

    # -- calculus and evaluation -----------------------------------------
    def truncate(self, maxdeg: int) -> "Polynomial":
        return Polynomial(self.nvars, {e: c for e, c in self._terms.items() if sum(e) <= maxdeg})

    def differentiate(self, var: int) -> "Polynomial":
        if not 0 <= var < self.nvars:
            raise IndexError(f"variable {var} out of range")
        out = {}
        for e, c in self._terms.items():
            k = e[var]
            if k:
                d = list(e)
                d[var] = k - 1
                out[tuple(d)] = out.get(tuple(d), 0.0) + c * k
        return Polynomial(self.nvars, out)

    def evaluate(self, z) -> float | np.ndarray:
        """Evaluate at a point (shape ``(nvars,)``) or many points (``(N, nvars)``)."""
        z = np.asarray(z, dtype=float)
        single = z.ndim == 1
        pts = np.atleast_2d(z)
        if pts.shape[1] != self.nvars:
            raise ValueError(f"dimension mismatch: point has {pts.shape[1]} entries, nvars={self.nvars}")
        exps, coeffs = self._arrays()
        if exps.shape[0] == 0:
            out = np.zeros(pts.shape[0])
            return float(out[0]) if single else out
        out = np.empty(pts.shape[0])
        maxdeg = exps.max(axis=0)
        chunk = max(1, 4_000_000 // max(1, exps.shape[0]))
        for start in range(0, pts.shape[0], chunk):
            block = pts[start:start + chunk]
            acc = np.ones((block.shape[0], exps.shape[0]))
            for v in range(self.nvars):
                if maxdeg[v] == 0:
                    continue
                powers = block[:, v:v + 1] ** np.arange(maxdeg[v] + 1)
                acc *= powers[:, exps[:, v]]
            out[start:start + chunk] = acc @ coeffs
        return float(out[0]) if single else out

    __call__ = evaluate

    def substitute(self, var: int, r: "Polynomial") -> "Polynomial":
        """Replace variable ``var`` by the polynomial ``r``."""
        if r.nvars != self.nvars:
            raise ValueError("dimension mismatch in substitute")
        if not 0 <= var < self.nvars:
            raise IndexError(f"variable {var} out of range")
        groups: dict[int, dict] = {}
        for e, c in self._terms.items():
            k = e[var]
            rest = list(e)
            rest[var] = 0
            groups.setdefault(k, {})[tuple(rest)] = c
        result = Polynomial.zero(self.nvars)
        power = Polynomial.constant(self.nvars, 1.0)
        for k in range(max(groups, default=-1) + 1):
            if k in groups:
                result = result + Polynomial(self.nvars, groups[k]) * power
            power = power * r
        return result

    def compose(self, images: Sequence["Polynomial"]) -> "Polynomial":
        """Simultaneously substitute ``z_i -> images[i]``; images may live in another ring."""
        if len(images) != self.nvars:
            raise ValueError("need one image per variable")
        nout = images[0].nvars
        powers = [[Polynomial.constant(nout, 1.0)] for _ in images]
        acc: dict = {}
        for e, c in self._terms.items():
            term = Polynomial.constant(nout, c)
            for v, k in enumerate(e):
                while len(powers[v]) <= k:
                    powers[v].append(powers[v][-1] * images[v])
                if k:
                    term = term * powers[v][k]
            for te, tc in term._terms.items():
                acc[te] = acc.get(te, 0.0) + tc
        return Polynomial(nout, acc)

    def integrate_box(self, box: Sequence[Sequence[float]]) -> float:
        return sum(c * lebesgue_box_moment(e, box) for e, c in self._terms.items())

    # -- serialization ----------------------------------------------------
    def to_text(self) -> str:
        lines = []
        for e in sorted(self._terms, key=grlex_key):
            lines.append(repr(self._terms[e]) + " " + " ".join(str(k) for k in e))
        return "\n".join(lines)

    @classmethod
    def from_text(cls, text: str, nvars: int | None = None) -> "Polynomial":
        terms = {}
        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split()
            e = tuple(int(k) for k in fields[1:])
            if nvars is None:
                nvars = len(e)
            elif len(e) != nvars:
                raise ValueError(f"line {raw!r} has {len(e)} exponents, expected {nvars}")
            terms[e] = terms.get(e, 0.0) + float(fields[0])
        if nvars is None:
            raise ValueError("cannot infer nvars from an empty serialization")
        return cls(nvars, terms)


# -- functional interface -------------------------------------------------
def add(p: Polynomial, q: Polynomial) -> Polynomial:
    return p + q


def mul(p: Polynomial, q: Polynomial) -> Polynomial:
    return p * q


def differentiate(p: Polynomial, var: int) -> Polynomial:
    return p.differentiate(var)


def evaluate(p: Polynomial, z) -> float | np.ndarray:
    return p.evaluate(z)


def substitute(p: Polynomial, var: int, r: Polynomial) -> Polynomial:
    return p.substitute(var, r)


def grlex_key(e: Sequence[int]):
    """Graded lexicographic key: lower total degree first, then larger leading exponents."""
    return (sum(e), tuple(-k for k in e))


def monomial_basis(nvars: int, maxdeg: int) -> list[tuple]:
    """All exponent tuples of total degree <= maxdeg in graded-lex order."""
    if maxdeg < 0:
        raise ValueError("maxdeg must be non-negative")
    basis = []
    for d in range(maxdeg + 1):
        block = []
        for combo in combinations_with_replacement(range(nvars), d):
            e = [0] * nvars
            for v in combo:
                e[v] += 1
            block.append(tuple(e))
        block.sort(key=grlex_key)
        basis.extend(block)
    return basis


def lebesgue_box_moment(mono: Sequence[int], box: Sequence[Sequence[float]]) -> float:
    """Integral of the monomial over the axis-aligned box."""
    if len(mono) != len(box):
        raise ValueError("box dimension does not match monomial")
    out = 1.0
    for k, (lo, hi) in zip(mono, box):
        if not lo < hi:
            raise ValueError(f"degenerate box interval [{lo}, {hi}]")
        out *= (hi ** (k + 1) - lo ** (k + 1)) / (k + 1)
    return out


def affine_images(nvars: int, offsets: Sequence[float], scales: Sequence[float]) -> list[Polynomial]:
    """Polynomials ``offsets[i] + scales[i] * z_i`` for use with :meth:`Polynomial.compose`."""
    return [
        Polynomial(nvars, {tuple(0 for _ in range(nvars)): o, tuple(int(j == i) for j in range(nvars)): s})
        for i, (o, s) in enumerate(zip(offsets, scales))
    ]


def taylor_sin(nvars: int, arg: Polynomial, degree: int) -> Polynomial:
    """Truncated Maclaurin series of ``sin(arg)``; ``arg`` must vanish at the origin."""
    out = Polynomial.zero(nvars)
    for k in range(1, degree + 1, 2):
        out = out + arg ** k * ((-1) ** ((k - 1) // 2) / math.factorial(k))
    return out.truncate(degree)


def taylor_cos(nvars: int, arg: Polynomial, degree: int) -> Polynomial:
    out = Polynomial.zero(nvars)
    for k in range(0, degree + 1, 2):
        out = out + arg ** k * ((-1) ** (k // 2) / math.factorial(k))
    return out.truncate(degree)
