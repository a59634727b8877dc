import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from contrakt.errors import ModelError
from contrakt.model import (
    Box, SwitchingSignal, check_continuity, check_one_sided_lipschitz, check_partition, load_system,
    load_system_file, mode_at,
)

TWO_MODE = """
[system]
name = relu
states = x
domain.x = -1 1

[mode.neg]
dx = "-x"
guard = "x <= 0"

[mode.pos]
dx = "-2*x"
guard = "x > 0"
"""


def test_load_transcriptional(fixtures_dir):
    sys = load_system_file(fixtures_dir / "transcriptional.sys")
    assert sys.kind == "pwsc" and sys.states == ("xt", "y")
    assert [m.name for m in sys.modes] == ["smooth", "degrading"]
    assert sys.domain.hi == (2.0, 1.0)
    assert sys.period == pytest.approx(2 * math.pi / 10)
    assert sys.params["delta"] == 20.0
    # mode regions on both sides of xt - y = h
    assert mode_at(sys, [0.5, 0.495], 0.0) == 0
    assert mode_at(sys, [0.5, 0.2], 0.0) == 1
    assert mode_at(sys, [0.5, 0.495], 0.0) == 0
    relu = load_system(TWO_MODE)
    assert mode_at(relu, [0.0], 0.0) == 0  # boundary belongs to the non-strict guard
    f = sys.field(0, [0.5, 0.2], 0.0)
    assert f[1] == pytest.approx(-0.5 * 0.2 + 5 * 0.8 * 0.3)
    assert sys.in_domain([0.5, 0.51]) and not sys.in_domain([0.5, 0.6])


def test_load_tss(fixtures_dir):
    sys = load_system_file(fixtures_dir / "pwl.sys")
    assert sys.kind == "tss" and len(sys.modes) == 2
    assert mode_at(sys, [0, 0], 0.99) == 0
    assert mode_at(sys, [0, 0], 1.0) == 1  # right-continuous
    assert mode_at(sys, [0, 0], 2.75) == 0
    assert mode_at(sys, [0, 0], 100.0) == 0
    np.testing.assert_allclose(sys.constant_jacobians[0], [[-1.0, 1.5], [0.8, -3.0]])


def test_jacobian_exprs_match_fd(fixtures_dir):
    sys = load_system_file(fixtures_dir / "transcriptional.sys")
    x = np.array([[0.7, 0.3]])
    for m in range(2):
        j = sys.jacobian_batch(m, x, 0.1)[0]
        h = 1e-6
        for k in range(2):
            e = np.zeros(2)
            e[k] = h
            fd = (sys.field(m, x[0] + e, 0.1) - sys.field(m, x[0] - e, 0.1)) / (2 * h)
            np.testing.assert_allclose(j[:, k], fd, atol=1e-7)


@pytest.mark.parametrize("doc, fragment", [
    ("[params]\nk = 1\n", r"missing \[system\]"),
    (TWO_MODE.replace("states = x", "states = "), "needs 'states'"),
    (TWO_MODE.replace("domain.x = -1 1", ""), "domain.x"),
    (TWO_MODE.replace("domain.x = -1 1", "domain.x = 1 -1"), "invalid interval"),
    (TWO_MODE.replace('dx = "-x"', 'dx = "-x +"'), "line"),
    (TWO_MODE.replace('dx = "-x"', 'dx = "-z"'), "undeclared"),
    (TWO_MODE.replace('guard = "x > 0"', 'guard = "x > 0.5"'), "partition"),
    (TWO_MODE.replace('guard = "x > 0"', 'guard = "x > -0.5"'), "partition"),
    (TWO_MODE.replace("[mode.pos]", "[mode.neg]"), "duplicate"),
    (TWO_MODE.replace('dx = "-2*x"', 'dy = "-2*x"'), "unexpected entry"),
    (TWO_MODE.replace("[system]", "[system]\nkind = tss"), "signal"),
    (TWO_MODE + "\n[params]\nx = 2\n", "shadows"),
])
def test_load_errors(doc, fragment):
    with pytest.raises(ModelError, match=fragment):
        load_system(doc)


def test_error_reports_line_and_column():
    doc = TWO_MODE.replace('dx = "-x"', 'dx = "-x * * 2"')
    with pytest.raises(ModelError) as info:
        load_system(doc)
    # document line, then the position inside the quoted expression
    assert "line 8" in str(info.value) and "column 6" in str(info.value)


def test_signal_errors():
    base = """
[system]
kind = tss
states = x
domain.x = -1 1
[mode.a]
dx = "-x"
[mode.b]
dx = "-2*x"
[signal]
"""
    with pytest.raises(ModelError, match="dwell violation"):
        load_system(base + "dwell = 0.5\nt=0 mode=a\nt=0.3 mode=b\n")
    with pytest.raises(ModelError, match="unknown mode"):
        load_system(base + "dwell = 0.5\nt=0 mode=c\n")
    with pytest.raises(ModelError, match="dwell"):
        load_system(base + "t=0 mode=a\n")
    with pytest.raises(ModelError, match="increasing"):
        load_system(base + "dwell = 0.1\nt=1 mode=a\nt=0 mode=b\n")
    with pytest.raises(ModelError, match="period"):
        load_system(base + "dwell = 0.5\nperiod = 1\nt=0 mode=a\nt=0.7 mode=b\n")
    with pytest.raises(ModelError, match="guards"):
        load_system(base.replace('dx = "-x"', 'dx = "-x"\nguard = "x <= 0"') + "dwell = 1\nt=0 mode=a\n")


def test_periodic_signal():
    s = SwitchingSignal(((0.0, 0), (1.0, 1)), dwell=0.5, period=3.0)
    assert [s.value_at(t) for t in (0.0, 0.99, 1.0, 2.99, 3.0, 4.0, 300.5)] == [0, 0, 1, 1, 0, 1, 0]
    assert s.switches_between(0.5, 7.5) == [(1.0, 1), (3.0, 0), (4.0, 1), (6.0, 0), (7.0, 1)]
    assert s.value_at(-5.0) == 0  # before the first breakpoint: first mode


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 4), st.integers(0, 2**32 - 1))
def test_random_signal_respects_dwell(n, seed):
    s = SwitchingSignal.random(n, 20.0, np.random.default_rng(seed), min_dwell=0.2, max_dwell=1.0)
    times = [t for t, _ in s.breakpoints]
    assert min(np.diff(times)) >= 0.2
    modes = [m for _, m in s.breakpoints]
    assert all(a != b for a, b in zip(modes, modes[1:]))
    for t, m in s.switches_between(0.0, 20.0):
        assert s.value_at(t) == m


def test_box():
    b = Box((0, -1), (1, 1))
    assert b.dim == 2 and b.contains([0.5, 0]) and not b.contains([1.1, 0])
    assert b.contains([1 + 1e-12, 0], tol=1e-9)
    g = b.grid(5)
    assert len(g[0]) == 5 and g[1][0] == -1
    with pytest.raises(ModelError):
        Box((0,), (1, 2))
    with pytest.raises(ModelError):
        Box((0,), (math.inf,))


def test_partition_and_continuity(fixtures_dir):
    sys = load_system_file(fixtures_dir / "transcriptional.sys")
    assert check_partition(sys).passed
    rep = check_continuity(sys)
    assert rep.passed and rep.boundary_points > 0
    assert rep.max_mismatch < 1e-8
    jump = load_system(TWO_MODE.replace('dx = "-2*x"', 'dx = "1 - 2*x"'))
    rep = check_continuity(jump)
    assert not rep.passed and rep.max_mismatch == pytest.approx(1.0, abs=1e-6)
    assert "FAIL" in rep.summary()


def test_one_sided_lipschitz(fixtures_dir):
    sys = load_system(TWO_MODE)
    assert check_one_sided_lipschitz(sys) <= -1 + 1e-9
    sys = load_system_file(fixtures_dir / "pwl.sys")
    # bounded by the largest 2-measure of the mode matrices
    from contrakt.measures import mu
    bound = max(mu(a, "2") for a in sys.constant_jacobians)
    assert check_one_sided_lipschitz(sys) <= bound + 1e-9


def test_virtual_inputs(fixtures_dir):
    v = load_system_file(fixtures_dir / "example1_virtual.sys")
    assert v.inputs == ("x1", "x2") and v.full_domain().dim == 4
    with pytest.raises(ModelError):
        v.field(0, [1, 1], 0.0)
    f = v.field(1, [1.0, 0.0], 0.5, u=[0.5, 0.0])
    assert f[0] == pytest.approx(-(2 + math.sin(0.5) + 0.5 * abs(math.sin(0.5))))
    assert mode_at(v, [0, 0], 0.0, u=[-0.1, 0.0]) == 0


def test_describe_and_batch_agree(fixtures_dir):
    sys = load_system_file(fixtures_dir / "transcriptional.sys")
    assert "d xt" not in sys.describe() and "dxt/dt" in sys.describe()
    rng = np.random.default_rng(1)
    pts = sys.domain.sample(rng, 50)
    batch = sys.field_batch(1, pts, 0.3)
    for p, row in zip(pts, batch):
        np.testing.assert_allclose(sys.field(1, p, 0.3), row, rtol=1e-14)
