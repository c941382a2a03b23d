#!/usr/bin/env python
# import
## batteries
import os
import sys
import math
import pytest
## 3rd party
import numpy as np
import torch
## package
from FMSR import FlowCore
from FMSR.FlowCore import PathConfig, FlowState
from FMSR.Utils import DataError, NumericError


def grids(seed=0, shape=(432, 8, 2)):
    rng = np.random.default_rng(seed)
    return rng.standard_normal(shape), rng.standard_normal(shape)


# path / field
def test_path_config():
    assert PathConfig().sigma_min == 0.1
    assert PathConfig(0).sigma(0.0) == 1.0
    assert PathConfig(0).sigma(1.0) == 0.0
    assert PathConfig(0.1).sigma(1.0) == pytest.approx(0.1)
    with pytest.raises(DataError):
        PathConfig(1.0)
    with pytest.raises(DataError):
        PathConfig(-0.1)

def test_sample_path_endpoints():
    x_h, x_0 = grids()
    assert np.array_equal(FlowCore.sample_path(x_h, x_0, 0.0), x_0)
    np.testing.assert_allclose(FlowCore.sample_path(x_h, x_0, 1.0),
                               x_h + 0.1 * x_0, atol=1e-12)
    np.testing.assert_allclose(FlowCore.sample_path(x_h, x_0, 0.5),
                               0.5 * x_h + 0.55 * x_0, atol=1e-12)

def test_sample_path_errors():
    x_h, x_0 = grids()
    with pytest.raises(DataError):
        FlowCore.sample_path(x_h, x_0[:-1], 0.5)
    with pytest.raises(DataError):
        FlowCore.sample_path(x_h, x_0, 1.5)
    with pytest.raises(DataError):
        FlowCore.target_field(x_h, x_0[:, :-1])

def test_target_field():
    x_h, x_0 = grids()
    assert np.array_equal(FlowCore.target_field(x_h, np.zeros_like(x_0)), x_h)
    np.testing.assert_allclose(FlowCore.target_field(x_h, x_0),
                               x_h - 0.9 * x_0, atol=1e-12)

def test_path_field_consistency():
    # central differences of the path equal the target field
    h = 1e-3
    rng = np.random.default_rng(0)
    for i in range(100):
        x_h, x_0 = grids(seed=i, shape=(16, 4, 2))
        t = rng.uniform(h, 1 - h)
        d = (FlowCore.sample_path(x_h, x_0, t + h) -
             FlowCore.sample_path(x_h, x_0, t - h)) / (2 * h)
        np.testing.assert_allclose(d, FlowCore.target_field(x_h, x_0), atol=1e-6)

def test_path_torch_batched_time():
    x_h = torch.randn(3, 2, 16, 4)
    x_0 = torch.randn(3, 2, 16, 4)
    t = torch.tensor([0.0, 0.5, 1.0])[:, None, None, None]
    x_t = FlowCore.sample_path(x_h, x_0, t)
    assert torch.equal(x_t[0], x_0[0])
    assert torch.allclose(x_t[2], x_h[2] + 0.1 * x_0[2])


# loss / guidance
def test_cfm_loss():
    u = np.ones((4, 3))
    assert FlowCore.cfm_loss(u, u) == 0
    assert FlowCore.cfm_loss(u + 1, u) == pytest.approx(1.0)
    assert FlowCore.cfm_loss(u - 2, u) == pytest.approx(4.0)
    v = torch.zeros(2, 2, 5, 5, requires_grad=True)
    loss = FlowCore.cfm_loss(v, torch.ones(2, 2, 5, 5))
    assert loss.item() == pytest.approx(1.0)
    loss.backward()
    assert v.grad is not None
    with pytest.raises(DataError):
        FlowCore.cfm_loss(u, u[:-1])

def test_cfg_combine():
    v_c, v_u = np.full((3, 3), 2.0), np.full((3, 3), 1.0)
    assert FlowCore.cfg_combine(v_c, v_u, 1.0) is v_c
    np.testing.assert_array_equal(FlowCore.cfg_combine(v_c, v_u, 0.0), v_u)
    np.testing.assert_allclose(FlowCore.cfg_combine(v_c, v_u, 1.5), 2.5)
    with pytest.raises(DataError):
        FlowCore.cfg_combine(v_c, v_u, -1.0)

def test_cfg_combine_affine():
    v_c, v_u = grids(seed=3)
    a = FlowCore.cfg_combine(v_c, v_u, 0.5) + FlowCore.cfg_combine(v_c, v_u, 2.5)
    b = 2 * FlowCore.cfg_combine(v_c, v_u, 1.5)
    np.testing.assert_allclose(a, b, atol=1e-9)


# solver
def test_midpoint_zero_and_constant():
    x_0, u = grids(seed=4)
    out = FlowCore.midpoint_solve(lambda t, x: np.zeros_like(x), x_0, 4)
    assert np.array_equal(out, x_0)
    for steps in (1, 3, 8):
        out = FlowCore.midpoint_solve(lambda t, x: u, x_0, steps)
        np.testing.assert_allclose(out, x_0 + u, atol=1e-12)

def test_midpoint_exponential():
    field = lambda t, x: x
    out = FlowCore.midpoint_solve(field, np.ones(1), 4)
    assert out[0] == pytest.approx(1.28125 ** 4, abs=1e-12)
    # second-order convergence
    errs = [abs(FlowCore.midpoint_solve(field, np.ones(1), n)[0] - math.e)
            for n in (4, 8, 16)]
    for a, b in zip(errs[:-1], errs[1:]):
        assert 3.5 <= a / b <= 4.5

def test_midpoint_trajectory():
    out, traj = FlowCore.midpoint_solve(lambda t, x: x, np.ones(1), 4,
                                        return_trajectory=True)
    assert len(traj) == 5
    assert isinstance(traj[0], FlowState)
    assert [s.t for s in traj] == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert traj[1].x_t[0] == pytest.approx(1.28125)
    assert np.array_equal(traj[-1].x_t, out)

def test_midpoint_deterministic_torch():
    x_0 = torch.randn(1, 2, 8, 8, generator=torch.Generator().manual_seed(0))
    field = lambda t, x: torch.sin(x) * (1 + t)
    a = FlowCore.midpoint_solve(field, x_0, 4)
    b = FlowCore.midpoint_solve(field, x_0, 4)
    assert torch.equal(a, b)

def test_midpoint_errors():
    with pytest.raises(DataError):
        FlowCore.midpoint_solve(lambda t, x: x, np.ones(1), 0)
    def bad_field(t, x):
        return x * np.nan if t >= 0.5 else x
    with pytest.raises(NumericError, match='step 2'):
        FlowCore.midpoint_solve(bad_field, np.ones(1), 4)
