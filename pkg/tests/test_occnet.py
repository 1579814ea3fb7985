import copy

import numpy as np
import pytest
import torch

from tumorocc.dataset import PairArrays
from tumorocc.errors import ConfigError, Divergence, EmptyCloud, LabelOutOfRange, ShapeMismatch
from tumorocc.occnet import (
    CHECKPOINT_MAGIC, NetworkConfig, OccupancyNetwork, TrainConfig, decode, encode, infer_occupancy, load_checkpoint,
    loss_fn, predict, predict_logits, recalibrate_bn, save_checkpoint, train,
)
from tumorocc.sensor import DepthPointCloud


def tiny_data(seed=0, P=6, N=64, M=96, C=3):
    """Each scene is a random blob; label 1 inside its radius, 2 in a slab above, else 0."""
    r = np.random.default_rng(seed)
    dpp = r.normal(size=(P, N, 3)) * 10
    occ = r.uniform(-20, 20, size=(P, M, 3))
    rad = np.linalg.norm(occ, axis=2)
    lab = np.where(rad < 12, 1, np.where(occ[..., 2] > 10, 2, 0))
    return PairArrays(dpp.astype(np.float32), occ.astype(np.float32), lab.astype(np.int64), C)


def zero_net(cfg=NetworkConfig.reduced()):
    net = OccupancyNetwork(cfg)
    with torch.no_grad():
        for p in net.parameters():
            p.zero_()
    return net


def test_config_validation():
    with pytest.raises(ConfigError):
        NetworkConfig(skip_layer=9)
    with pytest.raises(ConfigError):
        NetworkConfig(latent_dim=64)
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=0)


def test_output_shapes_and_parameter_count():
    cfg = NetworkConfig()
    net = OccupancyNetwork(cfg)
    out = net(torch.zeros(2, 100, 3), torch.zeros(2, 7, 3))
    assert out.shape == (2, 7, 4)
    dec = (1027 * 512 + 512) + 7 * (512 * 512 + 512)
    enc = (3 * 64 + 64) + (64 * 128 + 128) + (128 * 1024 + 1024)
    bn = 2 * 2 * 512
    assert sum(p.numel() for p in net.parameters()) == dec + enc + bn + 512 * 4 + 4


def test_he_uniform_init_is_seeded():
    a, b, c = OccupancyNetwork(NetworkConfig.reduced(), 1), OccupancyNetwork(NetworkConfig.reduced(), 1), OccupancyNetwork(NetworkConfig.reduced(), 2)
    assert torch.equal(a.decoder[0].weight, b.decoder[0].weight)
    assert not torch.equal(a.decoder[0].weight, c.decoder[0].weight)
    w = a.decoder[1].weight
    assert w.abs().max() <= (6 / w.shape[1]) ** 0.5
    assert torch.all(a.decoder[1].bias == 0)


def test_encoder_is_permutation_invariant(rng):
    net = OccupancyNetwork(NetworkConfig.reduced()).double()
    pts = rng.normal(size=(500, 3)) * 30
    z = encode(pts, net)
    for _ in range(5):
        assert np.array_equal(encode(pts[rng.permutation(500)], net), z)


def test_zero_weights_give_uniform_logits_and_class_zero():
    net = zero_net()
    dpp = DepthPointCloud(np.random.default_rng(0).normal(size=(50, 3)))
    q = np.random.default_rng(1).normal(size=(20, 3))
    logits = predict_logits(dpp, q, net)
    assert np.all(logits == 0.0)
    assert np.all(predict(dpp, q, net) == 0)


def test_loss_matches_log_sum_exp_oracle(rng):
    logits = rng.normal(size=(3, 5, 4)) * 3
    labels = rng.integers(0, 4, size=(3, 5))
    flat = logits.reshape(-1, 4)
    m = flat.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(flat - m).sum(axis=1))
    expect = np.mean(lse - flat[np.arange(15), labels.ravel()])
    got = loss_fn(torch.from_numpy(logits), torch.from_numpy(labels)).item()
    assert got == pytest.approx(expect, abs=1e-12)
    with pytest.raises(LabelOutOfRange):
        loss_fn(torch.from_numpy(logits), torch.from_numpy(labels + 4))
    with pytest.raises(ShapeMismatch):
        loss_fn(torch.from_numpy(logits), torch.from_numpy(labels[:, :4]))


def central_difference_check(net, pts, q, lab, h=1e-5):
    """Max relative error |a - n| / max(|a|, |n|, 1e-6) over every parameter entry."""
    net.train()
    net.zero_grad()
    loss_fn(net(pts, q), lab).backward()
    worst = 0.0
    for p in net.parameters():
        g = p.grad.detach().clone()
        flat = p.data.view(-1)
        for i in range(flat.numel()):
            old = flat[i].item()
            flat[i] = old + h
            up = loss_fn(net(pts, q), lab).item()
            flat[i] = old - h
            dn = loss_fn(net(pts, q), lab).item()
            flat[i] = old
            num = (up - dn) / (2 * h)
            a = g.view(-1)[i].item()
            worst = max(worst, abs(a - num) / max(abs(a), abs(num), 1e-6))
    return worst


def test_gradients_match_central_differences_small():
    cfg = NetworkConfig(latent_dim=8, hidden_layers=2, hidden_width=6, skip_layer=2, n_classes=3, encoder_widths=(5, 8))
    net = OccupancyNetwork(cfg, seed=3).double()
    r = np.random.default_rng(0)
    pts = torch.from_numpy(r.normal(size=(2, 12, 3)) * 30)
    q = torch.from_numpy(r.normal(size=(2, 5, 3)) * 30)
    lab = torch.from_numpy(r.integers(0, 3, size=(2, 5)))
    assert central_difference_check(net, pts, q, lab) < 1e-4


def test_decode_train_mode_leaves_running_stats_untouched():
    net = OccupancyNetwork(NetworkConfig.reduced())
    before = copy.deepcopy(net.state_dict())
    z = encode(np.random.default_rng(0).normal(size=(30, 3)), net)
    q = np.random.default_rng(1).normal(size=(40, 3))
    a = decode(z, q, net, "train")
    assert a.shape == (40, 4)
    for k, v in net.state_dict().items():
        assert torch.equal(v, before[k])
    with pytest.raises(ConfigError):
        decode(z, q, net, "other")


def test_predict_is_chunk_invariant(rng):
    net = OccupancyNetwork(NetworkConfig.reduced())
    dpp = rng.normal(size=(40, 3)) * 20
    q = rng.normal(size=(1000, 3)) * 20
    assert np.allclose(predict_logits(dpp, q, net, chunk=7), predict_logits(dpp, q, net), atol=1e-5)
    with pytest.raises(EmptyCloud):
        predict(np.zeros((0, 3)), q, net)


def test_training_is_deterministic_and_learns():
    data = tiny_data()
    cfg = NetworkConfig(latent_dim=32, hidden_layers=3, hidden_width=64, skip_layer=2, n_classes=3, encoder_widths=(16, 32))
    tc = TrainConfig(epochs=60, batch_scenes=3, queries_per_scene=64, seed=5)
    a, ha = train(data, cfg, tc, validation=data)
    b, hb = train(data, cfg, tc, validation=data)
    for (k, v), w in zip(a.state_dict().items(), b.state_dict().values()):
        assert torch.equal(v, w), k
    assert ha.records[-1]["train_loss"] < ha.records[0]["train_loss"] * 0.7
    assert ha.best_miou > 0.6
    assert [r["val_miou"] for r in ha.records] == [r["val_miou"] for r in hb.records]


def test_max_steps_stops_early():
    _, h = train(tiny_data(), NetworkConfig.reduced(3), TrainConfig(epochs=100, batch_scenes=2, max_steps=5))
    assert h.steps == 5 and len(h.records) == 2


def test_target_miou_stops_at_first_validation_reaching_it():
    data = tiny_data()
    _, h = train(data, NetworkConfig.reduced(3), TrainConfig(epochs=50, batch_scenes=3, target_miou=0.0), data)
    assert len(h.records) == 1 and h.best_epoch == 0


def test_cosine_schedule_is_validated_and_deterministic():
    with pytest.raises(ConfigError):
        TrainConfig(lr_schedule="step")
    tc = TrainConfig(epochs=3, batch_scenes=2, lr_schedule="cosine")
    a = train(tiny_data(), NetworkConfig.reduced(3), tc)[1]
    b = train(tiny_data(), NetworkConfig.reduced(3), tc)[1]
    c = train(tiny_data(), NetworkConfig.reduced(3), TrainConfig(epochs=3, batch_scenes=2))[1]
    loss = lambda h: [r["train_loss"] for r in h.records]
    assert loss(a) == loss(b)
    # identical first step, then the annealed rate diverges from the constant one
    assert loss(a)[0] != loss(c)[0] or loss(a)[1:] != loss(c)[1:]


def test_nan_input_raises_divergence():
    data = tiny_data()
    data.dpp[0, 0, 0] = np.nan
    with pytest.raises(Divergence):
        train(data, NetworkConfig.reduced(3), TrainConfig(epochs=1, batch_scenes=6))


def test_recalibrated_bn_matches_population_statistics():
    data = tiny_data(P=4, M=32)
    net = OccupancyNetwork(NetworkConfig.reduced(3))
    recalibrate_bn(net, data, batches=1, batch_scenes=4, queries=32)
    # one batch of every sample: running mean equals the exact batch mean of the skip pre-activation
    captured = []
    hook = net.bn_skip.register_forward_hook(lambda m, i, o: captured.append(i[0].detach()))
    net.train()
    with torch.no_grad():
        net(torch.from_numpy(data.dpp), torch.from_numpy(data.occ_points))
    hook.remove()
    assert torch.allclose(net.bn_skip.running_mean, captured[0].mean(0), atol=1e-5)


def test_checkpoint_round_trip_is_exact(tmp_path, rng):
    net = OccupancyNetwork(NetworkConfig.reduced(), seed=9)
    recalibrate_bn(net, tiny_data(C=4), batches=2, batch_scenes=2, queries=16)
    save_checkpoint(tmp_path / "m.ckpt", net, {"seed": 9})
    raw = (tmp_path / "m.ckpt").read_bytes()
    assert raw.startswith(CHECKPOINT_MAGIC)
    back, meta = load_checkpoint(tmp_path / "m.ckpt")
    assert meta == {"seed": 9}
    for (k, v), w in zip(net.state_dict().items(), back.state_dict().values()):
        if not k.endswith("num_batches_tracked"):
            assert torch.equal(v, w), k
    (tmp_path / "bad").write_bytes(b"nope" * 10)
    with pytest.raises(ConfigError):
        load_checkpoint(tmp_path / "bad")


def test_infer_occupancy_keeps_non_outside_points(rng):
    net = OccupancyNetwork(NetworkConfig.reduced(), seed=2)
    dpp = DepthPointCloud(rng.normal(size=(100, 3)) * 20)
    try:
        occ = infer_occupancy(dpp, net, 2000, seed=0)
    except Exception as exc:  # an untrained net may label everything outside
        assert type(exc).__name__ == "EmptyReconstruction"
    else:
        assert np.all(occ.labels > 0) and len(occ) <= 2000
