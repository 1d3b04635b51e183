import json

import pytest
import torch

from blurvfi.errors import ConfigError, ContractError, InputError
from blurvfi.pyramid import (BlurryInterpolator, FrameRef, ModelConfig, build_plan, cycle_pairs,
                             pad_to_multiple)


def enumerate_levels(scale):
    """Brute-force oracle: index sets produced at each level of the recurrence."""
    levels = {0: list(range(0, 2 * scale + 1, 2))}
    for k in range(1, scale + 1):
        prev = levels[k - 1]
        levels[k] = [(a + b) // 2 for a, b in zip(prev, prev[1:])]
    return levels


def expected_temporaries(scale):
    levels = enumerate_levels(scale)
    highest = {}
    for k in range(1, scale + 1):
        for i in levels[k]:
            highest[i] = k
    return sorted((i, k) for k in range(1, scale + 1) for i in levels[k] if highest[i] != k)


def test_scale2_plan():
    plan = build_plan(2)
    assert plan.input_indices == [0, 2, 4]
    l1, l2 = plan.levels
    assert [(tuple(r.index for r in a.inputs), a.output.index) for a in l1.applications] == [((0, 2), 1), ((2, 4), 3)]
    assert [(tuple(r.index for r in a.inputs), a.output.index) for a in l2.applications] == [((1, 3), 2)]
    assert plan.temporaries == []
    assert cycle_pairs(plan) == []
    # Eq. 10 tap: rightmost level-1 product drives the ConvLSTM feeding level 2
    assert plan.recurrent_taps == {2: FrameRef(1, 3)}
    assert l2.receives_hidden and not l1.receives_hidden


def test_scale3_plan():
    plan = build_plan(3)
    assert plan.input_indices == [0, 2, 4, 6]
    assert [a.output.index for a in plan.levels[0].applications] == [1, 3, 5]
    assert [a.output.index for a in plan.levels[1].applications] == [2, 4]
    (apex,) = plan.levels[2].applications
    assert apex.output == FrameRef(3, 3)
    assert apex.skips == (FrameRef(0, 2), FrameRef(0, 4))
    assert [(t.index, f.index) for t, f in cycle_pairs(plan)] == [(3, 3)]
    assert cycle_pairs(plan)[0] == (FrameRef(1, 3), FrameRef(3, 3))


def test_scale4_plan():
    plan = build_plan(4)
    assert plan.input_indices == [0, 2, 4, 6, 8]
    assert {t.index for t in plan.temporaries} == {3, 4, 5}
    assert [(t.index, f.index) for t, f in cycle_pairs(plan)] == [(3, 3), (4, 4), (5, 5)]


@pytest.mark.parametrize("scale", [2, 3, 4, 5, 6])
def test_plan_invariants(scale):
    plan = build_plan(scale)
    assert len(plan.input_indices) == scale + 1
    assert plan.output_indices == list(range(1, 2 * scale))
    assert [(t.index, t.level) for t in plan.temporaries] == expected_temporaries(scale)
    for temp, final in plan.cycle_pairs:
        assert temp.index == final.index and temp.level < final.level
    for lv in plan.levels:
        assert lv.group == f"backbone_level{lv.level}"
        assert bool(lv.applications[0].skips) == (lv.level >= 3)


def test_plan_rejects_small_scale():
    with pytest.raises(ConfigError):
        build_plan(1)


def test_plan_json_dump():
    d = json.loads(build_plan(4).to_json())
    assert d["scale"] == 4
    assert d["cycle_pairs"] == [["L1:3", "L3:3"], ["L2:4", "L4:4"], ["L1:5", "L3:5"]]
    assert [lv["sharing_group"] for lv in d["levels"]] == [f"backbone_level{k}" for k in range(1, 5)]


def _window(n, size=64, seed=0):
    g = torch.Generator().manual_seed(seed)
    return [torch.rand(1, 3, size, size, generator=g) for _ in range(n)]


def test_forward_cardinality_scale4():
    torch.manual_seed(0)
    model = BlurryInterpolator(ModelConfig.toy(4))
    out = model(_window(5), model.init_states(1, 64, 64))
    assert sorted(out.outputs) == list(range(1, 8))
    assert {r.index for r in out.temporaries} == {3, 4, 5}
    for t in list(out.outputs.values()) + list(out.temporaries.values()):
        assert t.shape == (1, 3, 64, 64)
    assert set(out.states) == {2, 3, 4}


def test_forward_zero_params_deterministic():
    model = BlurryInterpolator(ModelConfig.toy(3))
    with torch.no_grad():
        for p in model.parameters():
            p.zero_()
    window = _window(4)
    a = model(window, model.init_states(1, 64, 64))
    b = model(window, model.init_states(1, 64, 64))
    for i in a.outputs:
        assert torch.equal(a.outputs[i], b.outputs[i])
    # zero residual branch: level 1 reduces to averaging its two inputs
    torch.testing.assert_close(a.outputs[1], 0.5 * (window[0] + window[1]))
    for s in a.states.values():
        assert torch.equal(s.hidden, torch.zeros_like(s.hidden))


def test_forward_is_pure():
    torch.manual_seed(1)
    model = BlurryInterpolator(ModelConfig.toy(2))
    window = _window(3, 32)
    states = model.init_states(1, 32, 32)
    a = model(window, states)
    b = model(window, states)
    for i in a.outputs:
        assert torch.equal(a.outputs[i], b.outputs[i])
    for k in a.states:
        assert torch.equal(a.states[k].hidden, b.states[k].hidden)


def test_missing_state_is_contract_error():
    model = BlurryInterpolator(ModelConfig.toy(2))
    with pytest.raises(ContractError):
        model(_window(3, 16))


def test_wrong_window_length():
    model = BlurryInterpolator(ModelConfig.toy(2, recurrent=False))
    with pytest.raises(InputError):
        model(_window(4, 16))


def strip_recurrence(model):
    """Copy a recurrent model's weights into a recurrence-free twin (aux columns dropped)."""
    twin = BlurryInterpolator(ModelConfig(**{**model.config.to_dict(), "recurrent": False}))
    src = model.state_dict()
    hid = model.config.hidden_channels
    new = {}
    for k, v in twin.state_dict().items():
        w = src[k]
        if w.shape != v.shape:
            w = w[:, :-hid]  # head conv of a level that received hidden state
        new[k] = w
    twin.load_state_dict(new)
    return twin


@pytest.mark.parametrize("scale", [2, 3])
def test_zero_state_matches_stateless_variant(scale):
    torch.manual_seed(7)
    model = BlurryInterpolator(ModelConfig.toy(scale)).double()
    twin = strip_recurrence(model).double()
    window = [w.double() for w in _window(scale + 1, 32)]
    a = model(window, model.init_states(1, 32, 32, torch.float64))
    b = twin(window)
    # zero aux channels only change the conv summation order
    for i in a.outputs:
        torch.testing.assert_close(a.outputs[i], b.outputs[i], atol=1e-12, rtol=0)


def test_stateless_variant_is_seed_reproducible():
    torch.manual_seed(3)
    a = BlurryInterpolator(ModelConfig.toy(2, recurrent=False))
    torch.manual_seed(3)
    b = BlurryInterpolator(ModelConfig.toy(2, recurrent=False))
    window = _window(3, 32)
    for i, t in a(window).outputs.items():
        assert torch.equal(t, b(window).outputs[i])


def test_weight_sharing_within_level():
    model = BlurryInterpolator(ModelConfig.toy(4))
    calls = {}
    for lv in model.plan.levels:
        net = model.parameter_set(lv.level)
        net.register_forward_hook(lambda m, i, o, k=lv.level: calls.__setitem__(k, calls.get(k, 0) + 1))
    model(_window(5, 16), model.init_states(1, 16, 16))
    assert calls == {1: 4, 2: 3, 3: 2, 4: 1}
    # one parameter object per level: a gradient step reaches every application
    ids = [{id(p) for p in model.parameter_set(k).parameters()} for k in range(1, 5)]
    for a in range(4):
        for b in range(a + 1, 4):
            assert not ids[a] & ids[b]


@pytest.mark.parametrize("preset", [ModelConfig.toy, ModelConfig.full])
def test_parameter_counts(preset):
    without = [BlurryInterpolator(preset(l, False)).num_parameters() for l in (2, 3, 4)]
    with_rec = [BlurryInterpolator(preset(l, True)).num_parameters() for l in (2, 3, 4)]
    assert without[0] < without[1] < without[2]
    assert with_rec[0] < with_rec[1] < with_rec[2]
    for a, b in zip(without, with_rec):
        assert a < b < 1.05 * a


def test_pad_to_multiple():
    x = torch.rand(1, 3, 7, 10)
    y, size = pad_to_multiple(x, 4)
    assert y.shape[-2:] == (8, 12) and size == (7, 10)
    assert torch.equal(y[..., :7, :10], x)
