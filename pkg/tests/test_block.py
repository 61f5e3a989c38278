import numpy as np
import pytest

from cpasim import block as b
from cpasim.core import Params, ValidationError

OPEN, RB, LB = b.OPEN, b.RIGHT_BLOCKED, b.LEFT_BLOCKED


def label(x, pairs):
    return b.classify_block(b.block_configuration(x, pairs))


def test_all_infected_all_active_is_a4():
    assert label((1, 1, 1, 1), (OPEN, OPEN, OPEN)).cls is b.BlockClass.A4


def test_a2l_example():
    lab = label((1, 1, 0, 0), (OPEN, RB, OPEN))
    assert lab.cls is b.BlockClass.A2L and not lab.reflected


def test_both_directions_blocked_rejected():
    cfg = b.canonical_start("A2O")
    cfg.e[:2] = 0
    with pytest.raises(ValidationError):
        b.classify_block(cfg)


@pytest.mark.parametrize("x,pairs,cls", [
    ((1, 1, 1, 0), (OPEN, LB, OPEN), "A2R"),
    ((1, 1, 0, 0), (OPEN, OPEN, OPEN), "A2O"),
    ((1, 1, 1, 0), (OPEN, OPEN, RB), "A3L"),
    ((1, 1, 1, 1), (OPEN, OPEN, LB), "A3R"),
    ((1, 1, 1, 0), (OPEN, OPEN, OPEN), "A3O"),
    ((0, 0, 0, 0), (OPEN, OPEN, OPEN), "other"),
    ((1, 0, 1, 0), (OPEN, OPEN, OPEN), "other"),
])
def test_pattern_table(x, pairs, cls):
    assert label(x, pairs).cls.value == cls


def test_reflected_patterns():
    lab = label((0, 0, 1, 1), (OPEN, LB, OPEN))
    assert lab.cls is b.BlockClass.A2L and lab.reflected
    lab = label((0, 1, 1, 1), (OPEN, OPEN, OPEN))
    assert lab.cls is b.BlockClass.A3O and lab.reflected


def test_classification_total_and_reflection_invariant():
    configs = list(b.all_block_configurations())
    assert len(configs) == 16 * 9
    for cfg in configs:
        one, two = b.classify_block(cfg), b.classify_block(b.reflect(cfg))
        assert one.cls is two.cls
        assert b.reflect(b.reflect(cfg)) == cfg


def test_a4_iff_all_on():
    for cfg in b.all_block_configurations():
        is_a4 = b.classify_block(cfg).cls is b.BlockClass.A4
        assert is_a4 == bool(cfg.x.all() and cfg.e.all())


def test_completions_match_their_class():
    for cls in ("A2L", "A2R", "A2O"):
        comps = b.a2_completions(cls)
        assert comps
        assert any(c == b.canonical_start(cls) for c in comps)
        for c in comps:
            # overlapping patterns may report another A2 class, never Other
            assert b.classify_block(c).cls is not b.BlockClass.OTHER


def test_lambda_zero_never_good():
    for mode in ("closed", "hostile"):
        est = b.block_good_probability(Params(0, 1), 5.0, "A2O", 2000, mode, 1)
        if mode == "closed":
            assert est.value == 0.0
        else:
            # outside neighbours cannot infect either when lam = 0
            assert est.value == 0.0


def test_tiny_tau_never_good():
    for cls in ("A2L", "A2R", "A2O"):
        assert b.block_good_probability(Params(1000, 1), 1e-9, cls, 2000, "closed", 2).value == 0.0


def test_bad_inputs():
    with pytest.raises(ValidationError):
        b.block_good_probability(Params(1, 1), 0.0, "A2O", 10)
    with pytest.raises(ValidationError):
        b.block_good_probability(Params(1, 1), 1.0, "A2O", 10, boundary_mode="open")
    with pytest.raises(ValidationError):
        b.canonical_start("A4")


def test_default_tau_recipe():
    tau = b.default_tau(Params(1000, 1), p=0.1)
    assert tau == pytest.approx(2 * np.log(60) * 1.003 - np.log1p(-0.1 / 3) / 4)


def test_closed_and_hostile_agree_at_large_lambda():
    p = Params(1000, 1)
    tau = b.default_tau(p)
    for cls in ("A2L", "A2R", "A2O"):
        c = b.block_good_probability(p, tau, cls, 4000, "closed", 5)
        h = b.block_good_probability(p, tau, cls, 4000, "hostile", 6)
        assert abs(c.value - h.value) < 3 * np.hypot(c.se, h.se)


def test_block_reproducible():
    p = Params(5, 1)
    a = b.block_good_probability(p, 2.0, "A2L", 500, "hostile", 9)
    c = b.block_good_probability(p, 2.0, "A2L", 500, "hostile", 9)
    assert a == c
