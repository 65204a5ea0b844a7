import numpy as np
import pytest

from mhdci import iteration
from mhdci.params import ParamSet
from mhdci.spectral import Grid3


def desk_params(**kw):
    base = dict(block_lambda=1, lattice="minimal", grid_n=32, time_n=5)
    base.update(kw)
    return ParamSet(**base)


@pytest.fixture(scope="session")
def desk32():
    """Initial state and one step on a 32^3 grid (shared, ~10 s)."""
    p = desk_params()
    times, _ = iteration.time_grid(p)
    s0 = iteration.initial_state(p, times, Grid3(p.grid_n))
    s1 = iteration.step(s0, p)
    return p, s0, s1


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# ---------------------------------------------------------------- acceptance log

CRITERIA = {
    1: "geometric decomposition",
    2: "inverse divergence",
    3: "building-block laws",
    4: "amplitude cancellation",
    5: "initial data",
    6: "one full step",
    7: "decorrelation and commutator gain",
    8: "determinism",
}
_RESULTS: dict = {}


@pytest.fixture
def record():
    """record(criterion, part, ok, detail): log one checked part of an acceptance criterion."""
    def _record(criterion, part, ok, detail=""):
        _RESULTS.setdefault(criterion, []).append((part, bool(ok), detail))
        print(f"criterion {criterion} / {part}: {'pass' if ok else 'FAIL'} {detail}")
        return bool(ok)
    return _record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    tr = terminalreporter
    tr.write_sep("=", "acceptance criteria")
    for c, name in CRITERIA.items():
        parts = _RESULTS.get(c)
        if not parts:
            tr.write_line(f"criterion {c} ({name}): NOT RUN")
            continue
        ok = all(p[1] for p in parts)
        failed = "; ".join(f"{p[0]} {p[2]}" for p in parts if not p[1])
        tail = f" [failed: {failed}]" if failed else f" [{len(parts)} checks]"
        tr.write_line(f"criterion {c} ({name}): {'PASS' if ok else 'FAIL'}{tail}")
