import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from stsbos.poly import Polynomial

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@st.composite
def polynomials(draw, nvars=None, max_degree=6, max_terms=8):
    n = nvars if nvars is not None else draw(st.integers(1, 4))
    k = draw(st.integers(0, max_terms))
    terms = {}
    for _ in range(k):
        e = draw(st.lists(st.integers(0, max_degree), min_size=n, max_size=n))
        if sum(e) > max_degree:
            continue
        terms[tuple(e)] = draw(st.floats(-5, 5, allow_nan=False).filter(lambda c: abs(c) > 1e-3))
    return Polynomial(n, terms)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_points(nvars, count=25, seed=0, scale=1.0):
    return np.random.default_rng(seed).uniform(-scale, scale, size=(count, nvars))


def random_feasible_sdp(rng, sizes, m, n_free=0, density=0.3):
    """SDP with a known strictly feasible primal X0 and dual (y0, S0)."""
    import scipy.sparse as sp

    from stsbos.sdp import SdpProblem

    def spd(n):
        G = rng.standard_normal((n, n))
        return G @ G.T / n + 0.5 * np.eye(n)

    X0 = [spd(n) for n in sizes]
    S0 = [spd(n) for n in sizes]
    y0 = rng.standard_normal(m)
    A = []
    for n in sizes:
        rows = []
        for _ in range(m):
            M = sp.random(n, n, density=density, random_state=rng).toarray()
            rows.append((M + M.T).ravel())
        A.append(sp.csr_matrix(np.array(rows)))
    Af = rng.standard_normal((m, n_free))
    xf0 = rng.standard_normal(n_free)
    b = sum(Aj @ Xj.ravel() for Aj, Xj in zip(A, X0)) + Af @ xf0
    C = [S0[j] + (A[j].T @ y0).reshape(n, n) for j, n in enumerate(sizes)]
    cf = Af.T @ y0
    return SdpProblem(list(sizes), C, A, b, Af if n_free else None, cf if n_free else None)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE: dict = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
