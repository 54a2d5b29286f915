import numpy as np
import torch

from oracles import directional_gradient
from owsed.model.disentangle import DisentangleBlock


def test_parts_always_sum_back_to_input():
    # float32: a + (q - a) can differ from q in the last ulp, so "machine
    # precision" here means one ulp of the operands, and exactness in float64
    torch.manual_seed(0)
    block = DisentangleBlock(dim=16)
    for _ in range(20):
        q = torch.randn(4, 16)
        agn, spec = block(q)
        assert torch.allclose(agn + spec, q, atol=1e-6, rtol=1e-6)
    block64 = DisentangleBlock(dim=16).double()
    q = torch.randn(4, 16, dtype=torch.float64)
    agn, spec = block64(q)
    assert torch.allclose(agn + spec, q, atol=1e-14, rtol=1e-14)


def test_zeroed_weights_give_zero_agnostic_part():
    block = DisentangleBlock(dim=8)
    with torch.no_grad():
        for p in block.parameters():
            p.zero_()
    q = torch.randn(3, 8)
    agn, spec = block(q)
    assert torch.equal(agn, torch.zeros_like(agn))
    assert torch.equal(spec, q)


def test_configurable_depth():
    assert len([m for m in DisentangleBlock(8, num_layers=3).net
                if isinstance(m, torch.nn.Linear)]) == 3


def test_gradient_through_both_branches():
    rng = np.random.default_rng(0)
    for _ in range(20):
        block = DisentangleBlock(dim=6).double()
        with torch.no_grad():
            for p in block.parameters():
                p.copy_(torch.from_numpy(rng.normal(0, 0.5, p.shape)))
        probe_a = torch.from_numpy(rng.normal(0, 1, (3, 6)))
        probe_s = torch.from_numpy(rng.normal(0, 1, (3, 6)))

        def scalar_fn(q):
            agn, spec = block(q)
            return (agn * probe_a).sum() + (spec.pow(2) * probe_s).sum()

        ad, fd = directional_gradient(scalar_fn, [torch.from_numpy(rng.normal(0, 1, (3, 6)))])
        rel = abs(ad - fd) / max(abs(ad), abs(fd), 1e-12)
        assert rel <= 1e-4
