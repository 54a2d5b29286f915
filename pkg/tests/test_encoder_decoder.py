import torch

from owsed.model.decoder import TemporalDecoder
from owsed.model.encoder import TemporalEncoder


def make_encoder(layers, mode="deformable", dim=8):
    return TemporalEncoder(dim=dim, heads=2, points=2, ffn_dim=16,
                           dropout=0.0, mode=mode, num_layers=layers)


def make_decoder(layers, mode="deformable", dim=8, queries=5):
    return TemporalDecoder(dim=dim, heads=2, points=2, ffn_dim=16, dropout=0.0,
                           mode=mode, num_layers=layers, num_queries=queries)


def test_zero_layer_encoder_is_identity():
    enc = make_encoder(0)
    x = torch.randn(2, 7, 8)
    assert torch.equal(enc(x), x)


def test_encoder_reference_points_are_bin_centers():
    # first frame of a 10-frame sequence queries at 0.05
    refs = (torch.arange(10, dtype=torch.float32) + 0.5) / 10
    assert refs[0] == 0.05
    assert refs[-1] == 0.95


def test_encoder_eval_mode_deterministic():
    enc = make_encoder(2)
    enc.eval()
    x = torch.randn(1, 9, 8)
    assert torch.equal(enc(x), enc(x))


def test_zero_layer_decoder_returns_initial_embeddings():
    dec = make_decoder(0)
    memory = torch.randn(3, 6, 8)
    stack, refs = dec(memory)
    assert stack.shape == (1, 3, 5, 8)
    expected = dec.query_embed.weight.unsqueeze(0).expand(3, -1, -1)
    assert torch.equal(stack[0], expected)
    assert refs.shape == (3, 5)
    assert float(refs.min()) >= 0.0 and float(refs.max()) <= 1.0


def test_decoder_returns_all_intermediate_layers():
    dec = make_decoder(3)
    dec.eval()
    stack, _ = dec(torch.randn(2, 6, 8))
    assert stack.shape == (3, 2, 5, 8)
    assert not torch.equal(stack[0], stack[2])


def test_decoder_eval_mode_deterministic():
    dec = make_decoder(2)
    dec.eval()
    memory = torch.randn(1, 6, 8)
    a, _ = dec(memory)
    b, _ = dec(memory)
    assert torch.equal(a, b)


def test_dense_decoder_invariant_to_memory_permutation():
    # dense cross-attention has no positional sensitivity, so permuting
    # encoder frames leaves the output unchanged
    dec = make_decoder(2, mode="dense")
    dec.eval()
    memory = torch.randn(1, 6, 8)
    perm = torch.randperm(6)
    a, _ = dec(memory)
    b, _ = dec(memory[:, perm])
    assert torch.allclose(a, b, atol=1e-5)


def test_deformable_decoder_time_reversal_equivariance():
    # with sampling offsets forced to zero, each query reads memory only at
    # its reference; reversing memory and mapping r -> 1 - r reads the same
    # frames (index bookkeeping: x = r*T - 0.5 maps to T - 1 - x)
    torch.manual_seed(0)
    dec = make_decoder(2).double()
    dec.eval()
    for layer in dec.layers:
        with torch.no_grad():
            layer.cross_attn.sampling_offsets.weight.zero_()
            layer.cross_attn.sampling_offsets.bias.zero_()
    memory = torch.randn(1, 6, 8, dtype=torch.float64)

    refs = torch.sigmoid(dec.reference_logit)
    out_forward = _run_with_refs(dec, memory, refs)
    out_reversed = _run_with_refs(dec, memory.flip(1), 1.0 - refs)
    assert torch.allclose(out_forward, out_reversed, atol=1e-10)


def _run_with_refs(dec, memory, refs):
    queries = dec.query_embed.weight.unsqueeze(0).expand(memory.shape[0], -1, -1).double()
    references = refs.unsqueeze(0).expand(memory.shape[0], -1).double()
    for layer in dec.layers:
        queries = layer(queries, references, memory)
    return queries
