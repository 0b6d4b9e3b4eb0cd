import pytest
import torch

from featdecomp.model import PARAM_GROUPS, DualStreamDetector, ModelConfig, build_model, load_pretrained_resnet


@pytest.fixture(scope="module")
def full_model():
    return build_model(ModelConfig(n_synth_classes=7), seed=0).eval()


def test_full_config_defaults():
    cfg = ModelConfig()
    assert cfg.stage_channels == (64, 128, 256, 512) and cfg.feature_dim == 512
    assert (cfg.n_compression, cfg.n_speed, cfg.init) == (10, 16, "random")


def test_full_shapes(full_model):
    with torch.no_grad():
        out = full_model(torch.randn(2, 1, 257, 257))
    assert out.hidden.shape == (2, 256, 17, 17)
    assert out.f_s.shape == out.f_c.shape == (2, 512)
    assert out.logits_synth.shape == (2, 7)
    assert out.logits_comp.shape == (2, 10) and out.logits_speed.shape == (2, 16)
    assert out.logit_final.shape == (2,) and out.f_cls.shape == (2, 1024)
    assert torch.equal(out.f_cls, torch.cat([out.f_c, out.f_s], 1))


def test_spatial_extent_rule():
    n = 257
    for _ in range(4):
        n = -(-n // 2)
    assert n == 17


@pytest.mark.parametrize("b", [1, 3])
def test_small_shapes_any_batch(small_model, b):
    m = small_model(n_synth_classes=3).eval()
    with torch.no_grad():
        out = m(torch.randn(b, 257, 257))  # channel axis added when missing
    assert out.hidden.shape == (b, 64, 17, 17)
    assert out.f_cls.shape == (b, 256) and out.logits_synth.shape == (b, 3)
    for v in (out.f_s, out.f_c, out.logits_synth, out.logits_comp, out.logits_speed, out.logit_final):
        assert torch.isfinite(v).all()


def test_bad_input_shape(small_model):
    with pytest.raises(ValueError):
        small_model()(torch.randn(2, 3, 64, 64))


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(n_synth_classes=1)
    with pytest.raises(ValueError):
        ModelConfig(stage_channels=(1, 2, 3))
    with pytest.raises(ValueError):
        ModelConfig(init="pretrained_backbone")


def test_streams_share_no_parameters(small_model):
    groups = small_model().param_groups()
    assert set(groups) == set(PARAM_GROUPS)
    ids = {name: {id(p) for p in ps} for name, ps in groups.items()}
    names = list(ids)
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            assert not ids[a] & ids[b], (a, b)
    assert sum(len(v) for v in ids.values()) == len(list(small_model().parameters()))


def test_zero_hidden_gives_identical_rows(small_model):
    m = small_model().eval()
    with torch.no_grad():
        f = m.synth_stream(torch.zeros(4, 64, 17, 17))
    assert torch.allclose(f, f[:1].expand_as(f))


def test_identical_inputs_identical_rows(small_model):
    m = small_model().eval()
    x = torch.randn(1, 1, 257, 257)
    with torch.no_grad():
        out = m(torch.cat([x, x]))
    # float32 GEMM kernels may round rows of one batch differently
    torch.testing.assert_close(out.logit_final[0], out.logit_final[1], rtol=1e-5, atol=1e-5)
    torch.testing.assert_close(out.f_cls[0], out.f_cls[1], rtol=1e-5, atol=1e-5)


def test_final_logit_reaches_both_streams(small_model, random_batch):
    m = small_model()
    m(random_batch(4).spec).logit_final.sum().backward()
    for name in ("synth_stream", "content_stream", "backbone"):
        assert sum(float(p.grad.abs().sum()) for p in m.param_groups()[name]) > 0


def test_decomposition_wiring(small_model, random_batch):
    m = small_model()
    out = m(random_batch(4).spec)
    groups = m.param_groups()
    g = torch.autograd.grad(out.logits_synth.sum(), groups["content_stream"], allow_unused=True, retain_graph=True)
    assert all(x is None for x in g)
    g = torch.autograd.grad(out.logits_comp.sum() + out.logits_speed.sum(), groups["synth_stream"],
                            allow_unused=True)
    assert all(x is None for x in g)


def test_frozen_head_gives_head_no_gradient(small_model):
    m = small_model()
    f_c = torch.randn(3, 128, requires_grad=True)
    m.synth_logits_frozen(f_c).sum().backward()
    assert m.synth_head.weight.grad is None and f_c.grad is not None
    assert torch.equal(m.synth_logits_frozen(f_c.detach()), m.synth_head(f_c.detach()))


def test_build_model_seeded(small_model):
    a, b = small_model(seed=4), small_model(seed=4)
    assert all(torch.equal(x, y) for x, y in zip(a.state_dict().values(), b.state_dict().values()))
    c = small_model(seed=5)
    assert not torch.equal(a.backbone.conv1.weight, c.backbone.conv1.weight)


def test_build_model_leaves_global_rng_alone(small_model):
    torch.manual_seed(0)
    expect = torch.rand(1)
    torch.manual_seed(0)
    small_model()
    assert torch.equal(torch.rand(1), expect)


def test_pretrained_resnet_layout_loaded(tmp_path):
    torchvision = pytest.importorskip("torchvision")
    ref = torchvision.models.resnet18(weights=None, num_classes=10)
    # single input channel like a spectrogram encoder
    ref.conv1 = torch.nn.Conv2d(1, 64, 7, 2, 3, bias=False)
    state = {f"audio.{k}": v for k, v in ref.state_dict().items()}
    torch.save(state, tmp_path / "r18.pt")
    m = build_model(ModelConfig(init="pretrained_backbone", pretrained_path=str(tmp_path / "r18.pt")))
    assert torch.equal(m.backbone.layer3[1].conv2.weight, ref.layer3[1].conv2.weight)
    assert torch.equal(m.synth_stream.layer4[0].conv1.weight, ref.layer4[0].conv1.weight)
    assert torch.equal(m.content_stream.layer4[0].conv1.weight, ref.layer4[0].conv1.weight)
    filled = load_pretrained_resnet(DualStreamDetector(ModelConfig()), state)
    assert any(k.startswith("synth_stream.") for k in filled) and any(k.startswith("content_stream.") for k in filled)
