import json
from pathlib import Path

import numpy as np
import pytest

from signgan.autodiff import GraphError, Tensor, grad, no_grad, ops
from signgan.layers import Embedding
from signgan.networks import (
    PAPER_BATCH_SIZES,
    PAPER_WIDTHS,
    NetConfig,
    build_networks,
    count_parameters,
    resolution,
)

GOLDEN = json.loads((Path(__file__).parent / "golden" / "param_counts.json").read_text())


def small(max_stage=2, **kw):
    base = dict(n_classes=3, max_stage=max_stage, widths=(8,) * (max_stage + 1),
                latent_dim=6, embed_dim=5, attention_resolutions=(16,), batch_sizes=(2,))
    base.update(kw)
    return NetConfig(**base)


def test_paper_stage_table():
    cfg = NetConfig(n_classes=165, max_stage=6, widths=PAPER_WIDTHS, batch_sizes=PAPER_BATCH_SIZES)
    stages = cfg.stages()
    assert [s.resolution for s in stages] == [8, 16, 32, 64, 128, 256, 512]
    assert [s.width for s in stages] == [512, 512, 512, 256, 128, 64, 32]
    assert [s.resolution for s in stages if s.attention] == [64, 128]
    assert [s.batch_size for s in stages] == [32, 32, 32, 32, 16, 16, 8]


def test_attention_width_checked():
    with pytest.raises(ValueError):
        NetConfig(n_classes=2, max_stage=1, widths=(12, 12), attention_resolutions=(16,))


def test_shape_ladder_and_range(rng):
    cfg = small()
    G, D = build_networks(cfg, seed=0)
    z = rng.standard_normal((2, 6)) * 5
    for stage in range(3):
        R = resolution(stage)
        with no_grad():
            x = G(z, [0, 2], stage).data
            s = D(x, [0, 2], stage).data
        assert x.shape == (2, 3, R, R)
        assert np.all(np.abs(x) <= 1)
        assert s.shape == (2,)


def test_critic_rejects_wrong_resolution(rng):
    G, D = build_networks(small(), 0)
    with pytest.raises(GraphError):
        D(rng.standard_normal((1, 3, 16, 16)), [0], 0)


@pytest.mark.parametrize("stage,alpha", [(3, 1.0), (-1, 1.0), (1, 1.2)])
def test_invalid_stage_or_alpha(stage, alpha, rng):
    G, _ = build_networks(small(), 0)
    with pytest.raises(ValueError):
        G(rng.standard_normal((1, 6)), [0], stage, alpha)


def test_invalid_class_id(rng):
    G, D = build_networks(small(), 0)
    with pytest.raises(IndexError):
        G(rng.standard_normal((1, 6)), [3], 0)
    with pytest.raises(IndexError):
        D(rng.standard_normal((1, 3, 8, 8)), [5], 0)


def test_generator_alpha_zero_is_upsampled_previous_rgb(rng):
    G, _ = build_networks(small(), 0)
    z, labels = rng.standard_normal((2, 6)), [1, 2]
    with no_grad():
        low = G(z, labels, 1).data  # stage 1, alpha 1 (tanh applied)
        faded = G(z, labels, 2, 0.0).data
    # tanh commutes with nearest-neighbour upsampling
    np.testing.assert_allclose(faded, low.repeat(2, axis=2).repeat(2, axis=3), rtol=0, atol=1e-14)


def test_critic_alpha_zero_is_downsampled_previous_path(rng):
    _, D = build_networks(small(), 0)
    x, labels = rng.uniform(-1, 1, (2, 3, 32, 32)), [0, 1]
    with no_grad():
        faded = D(x, labels, 2, 0.0).data
        pooled = x.reshape(2, 3, 16, 2, 16, 2).mean(axis=(3, 5))
        low = D(pooled, labels, 1).data
        tensor_alpha = D(x, labels, 2, Tensor(np.zeros(1))).data
    np.testing.assert_allclose(faded, low, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(tensor_alpha, low, rtol=1e-12, atol=1e-12)


def test_end_to_end_gradient_flow(rng):
    G, D = build_networks(small(), 0)
    for net in (G, D):
        for name, p in net.parameters().items():
            if name.endswith("gamma"):
                p.data[:] = 0.3
    for stage in range(3):
        z = Tensor(rng.standard_normal((2, 6)), requires_grad=True)
        g = grad(ops.sum(D(G(z, [0, 1], stage, 0.5), [0, 1], stage, 0.5)), z).data
        assert np.isfinite(g).all() and np.abs(g).max() > 0


def test_fixed_seed_is_bit_identical(rng):
    z = rng.standard_normal((2, 6))
    outs = []
    for _ in range(2):
        G, D = build_networks(small(), seed=7)
        with no_grad():
            x = G(z, [0, 1], 2, 0.3).data
            outs.append((x, D(x, [0, 1], 2, 0.3).data))
    assert np.array_equal(outs[0][0], outs[1][0]) and np.array_equal(outs[0][1], outs[1][1])


def test_label_sensitivity(rng):
    G, _ = build_networks(small(), 0)
    z = np.repeat(rng.standard_normal((1, 6)), 3, axis=0)
    with no_grad():
        x = G(z, [0, 1, 2], 1).data
    assert not np.allclose(x[0], x[1]) and not np.allclose(x[1], x[2])


def test_critic_uses_full_resolution_label_map(rng):
    _, D = build_networks(small(), 0)
    m = D.label_map(np.array([0, 2]), 2)
    assert m.shape == (2, 1, 32, 32)


def test_paper_scale_label_map_projection_size():
    # 512x512 map at the last paper stage: one linear layer K -> 512*512
    from signgan.layers import Linear
    assert Linear(165, 512 * 512, "linear", 1.0).weight.size == 165 * 512 * 512


def test_parameter_count_embedding():
    assert count_parameters(Embedding(165, 512)) == 84_480


def test_parameter_count_monotone_in_stage():
    counts = [sum(count_parameters(n) for n in build_networks(small(s), 0)) for s in range(3)]
    assert counts[0] < counts[1] < counts[2]


def test_desk_parameter_counts_match_golden():
    c = GOLDEN["config"]
    G, D = build_networks(NetConfig(n_classes=c["n_classes"], max_stage=c["max_stage"], widths=tuple(c["widths"]),
                                    latent_dim=c["latent_dim"], embed_dim=c["embed_dim"]), 0)
    assert count_parameters(G) == GOLDEN["generator"]
    assert count_parameters(D) == GOLDEN["critic"]


def test_desk_parameter_counts_by_hand():
    conv = lambda i, o, k: i * o * k * k + o  # noqa: E731
    gen = 3 * 512 + (1024 * 64 * 64 + 64 * 64) + 3 * 2 * conv(64, 64, 3) + 3 * conv(64, 3, 1)
    head = conv(65, 64, 3) + conv(64, 64, 3) + 64 * 64 + 1
    crit = 3 * 3 + sum(3 * r * r + r * r for r in (8, 16, 32)) + 3 * conv(4, 64, 1) + 2 * 2 * conv(64, 64, 3) + head
    assert (gen, crit) == (GOLDEN["generator"], GOLDEN["critic"])
