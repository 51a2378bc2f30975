import random

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from mcgattack.core import (
    AttackGoal,
    AttackResult,
    QueryLedger,
    clamp_adversarial,
    is_success,
    project_feasible,
    project_linf,
)
from mcgattack.errors import BudgetExhausted, InvalidGoal, InvalidScores, InvalidTensor, ShapeError
from mcgattack.serialization import container_paths, load_container, save_container


def test_project_clamps_componentwise():
    out = project_linf(torch.tensor([0.10, -0.02]), 0.05)
    assert torch.equal(out, torch.tensor([0.05, -0.02]))


def test_project_inside_ball_is_bit_identical():
    d = torch.tensor([0.01, -0.049, 0.0, 0.03])
    assert torch.equal(project_linf(d, 0.05), d)


def test_project_hits_radius_exactly():
    gen = torch.Generator().manual_seed(3)
    d = torch.rand(3, 8, 8, generator=gen) * 0.6 - 0.3
    d.view(-1)[0] = 0.3
    out = project_linf(d, 0.031)
    # scalar oracle loop
    eps32 = float(torch.tensor(0.031))
    expected = max(abs(min(max(v, -eps32), eps32)) for v in d.view(-1).tolist())
    assert float(out.abs().max()) == expected == eps32


def test_project_rejects_non_finite():
    with pytest.raises(InvalidTensor):
        project_linf(torch.tensor([float("nan"), 0.0]), 0.1)


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(-10, 10, allow_nan=False, width=32), min_size=1, max_size=32),
    st.floats(1e-4, 5.0),
)
def test_project_idempotent_and_non_expansive(values, eps):
    d = torch.tensor(values)
    once = project_linf(d, eps)
    assert torch.equal(project_linf(once, eps), once)
    assert float(once.abs().max()) <= min(float(d.abs().max()), float(torch.tensor(eps)))


def test_clamp_adversarial_cases():
    assert float(clamp_adversarial(torch.tensor([0.9]), torch.tensor([0.2]))) == 1.0
    assert float(clamp_adversarial(torch.tensor([0.5]), torch.tensor([0.0]))) == 0.5
    with pytest.raises(ShapeError):
        clamp_adversarial(torch.zeros(3), torch.zeros(4))


def test_clamp_adversarial_range_scan():
    gen = torch.Generator().manual_seed(0)
    x = torch.rand(3, 16, 16, generator=gen)
    d = torch.randn(3, 16, 16, generator=gen)
    out = clamp_adversarial(x, d)
    assert all(0.0 <= v <= 1.0 for v in out.view(-1).tolist())


@pytest.mark.parametrize(
    "scores, goal, expected",
    [
        ([0.1, 0.9], AttackGoal.untargeted(0), True),
        ([0.9, 0.1], AttackGoal.untargeted(0), False),
        ([0.2, 0.3, 0.5], AttackGoal.targeted(0, 2), True),
        ([0.5, 0.5], AttackGoal.untargeted(0), False),  # tie goes to class 0
        ([0.5, 0.5], AttackGoal.untargeted(1), True),
    ],
)
def test_is_success(scores, goal, expected):
    assert is_success(torch.tensor(scores), goal) is expected


def test_is_success_rejects_empty():
    with pytest.raises(InvalidScores):
        is_success(torch.tensor([]), AttackGoal.untargeted(0))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.001, 1.0), min_size=2, max_size=10), st.floats(0.01, 100.0))
def test_is_success_scale_invariant(scores, c):
    s = torch.tensor(scores, dtype=torch.float64)
    goal = AttackGoal.untargeted(0)
    assert is_success(s, goal) == is_success(s * c, goal)


def test_goal_validation():
    with pytest.raises(InvalidGoal):
        AttackGoal.targeted(1, 1)
    with pytest.raises(InvalidGoal):
        AttackGoal("sideways", 0)
    with pytest.raises(InvalidGoal):
        AttackGoal.untargeted(5).check(3)


def test_ledger_boundary():
    ledger = QueryLedger(10, used=10)
    with pytest.raises(BudgetExhausted):
        ledger.charge()


def test_ledger_randomized_episodes_never_overspend():
    rnd = random.Random(0)
    for _ in range(10_000):
        ledger = QueryLedger(rnd.randint(0, 20))
        for _ in range(rnd.randint(0, 30)):
            try:
                ledger.charge(rnd.random() < 0.1)
            except BudgetExhausted:
                break
        assert ledger.used <= ledger.budget
        assert len(ledger.log) == ledger.used
        assert [i for i, _ in ledger.log] == list(range(1, ledger.used + 1))


def test_attack_result_invariant():
    AttackResult(True, 1, None, first_query_success=True)
    with pytest.raises(ValueError):
        AttackResult(True, 3, None, first_query_success=True)


def test_project_feasible_is_exact_in_float32():
    gen = torch.Generator().manual_seed(0)
    x = torch.rand(200_000, generator=gen)
    delta = torch.randn(200_000, generator=gen)
    out = project_feasible(x, delta, 0.05)
    assert float(out.abs().max()) <= float(torch.tensor(0.05))
    adv = x + out
    assert float(adv.min()) >= 0.0 and float(adv.max()) <= 1.0
    inside = (delta.abs() < 0.01) & (x > 0.1) & (x < 0.9)
    assert torch.equal(out[inside], delta[inside])


def test_checkpoint_stems_may_contain_dots(tmp_path):
    save_container(tmp_path / "flow_lr0.01_seed0", {"w": torch.arange(3.0)}, {"note": "x"})
    arrays, meta = load_container(tmp_path / "flow_lr0.01_seed0")
    assert torch.equal(arrays["w"], torch.arange(3.0)) and meta == {"note": "x"}
    assert container_paths(tmp_path / "a.b.npz")[1].name == "a.b.json"
