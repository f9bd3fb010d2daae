#!/usr/bin/env python3
"""
Pruebas del Vision Transformer, la pérdida, el paso SGD y el formato VITW.
"""

import math
import os
import sys
import tempfile
from pathlib import Path

import torch

sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from src.errors import ConfigurationError, FormatError, LabelError, NumericError
from src.keyperm import extend_for_class_token, gen_permutation, permute_rows
from src.metrics import accuracy, cross_entropy, loss_and_grads, sgd_step
from src.models import (ViTConfig, create_model, extract_patches, get_model_info, init_params,
                        load_params, predict_logits, read_vitw, save_params)

SMALL_CFG = ViTConfig(image_h=8, image_w=8, channels=3, patch_size=4, embed_dim=16,
                      num_heads=2, num_layers=2, mlp_dim=32, num_classes=5)
GRAD_CFG = ViTConfig(image_h=4, image_w=4, channels=1, patch_size=2, embed_dim=8,
                     num_heads=2, num_layers=1, mlp_dim=16, num_classes=3)


def random_images(cfg: ViTConfig, count: int, seed: int = 0) -> torch.Tensor:
    generator = torch.Generator().manual_seed(seed)
    return torch.rand((count,) + cfg.image_shape, generator=generator)


def test_config_validation():
    for kwargs in ({'patch_size': 3}, {'embed_dim': 10, 'num_heads': 4}, {'num_classes': 0}):
        try:
            ViTConfig(**kwargs)
            assert False, f"configuración inválida aceptada: {kwargs}"
        except ConfigurationError:
            pass
    assert ViTConfig().n_patches == 16
    assert ViTConfig().patch_dim == 192
    assert ViTConfig.from_vector(SMALL_CFG.to_vector()) == SMALL_CFG


def test_extract_patches_order():
    cfg = ViTConfig(image_h=4, image_w=4, channels=1, patch_size=2, embed_dim=4,
                    num_heads=1, num_layers=0, mlp_dim=4, num_classes=2)
    image = torch.arange(16, dtype=torch.float32).reshape(4, 4, 1)
    patches = extract_patches(image, cfg)
    assert patches.tolist() == [[0, 1, 4, 5], [2, 3, 6, 7], [8, 9, 12, 13], [10, 11, 14, 15]]


def test_shapes():
    model = init_params(SMALL_CFG, seed=0)
    images = random_images(SMALL_CFG, 3)
    z0 = model.embed(images)
    assert z0.shape == (3, SMALL_CFG.n_patches + 1, SMALL_CFG.embed_dim)
    assert model.encoder_forward(z0).shape == z0.shape
    assert model(images).shape == (3, SMALL_CFG.num_classes)
    assert predict_logits(model, images[0].numpy()).shape == (1, SMALL_CFG.num_classes)


def test_embed_with_zero_embeddings_keeps_only_class_token():
    model = init_params(SMALL_CFG, seed=1)
    with torch.no_grad():
        model.patch_embedding.zero_()
        model.pos_embedding.zero_()
        model.class_token.copy_(torch.arange(SMALL_CFG.embed_dim, dtype=torch.float32))
    z0 = model.embed(random_images(SMALL_CFG, 2))
    assert torch.equal(z0[:, 0], model.class_token.detach().expand(2, -1))
    assert torch.count_nonzero(z0[:, 1:]) == 0


def test_zero_depth_encoder_is_identity():
    cfg = ViTConfig(image_h=8, image_w=8, channels=3, patch_size=4, embed_dim=16,
                    num_heads=2, num_layers=0, mlp_dim=32, num_classes=5)
    model = init_params(cfg, seed=2)
    z = torch.randn(2, cfg.n_patches + 1, cfg.embed_dim)
    assert torch.equal(model.encoder_forward(z), z)


def test_zero_output_projections_make_identity():
    model = init_params(SMALL_CFG, seed=3)
    with torch.no_grad():
        for layer in model.layers:
            layer.attn.out.weight.zero_()
            layer.attn.out.bias.zero_()
            layer.mlp.fc2.weight.zero_()
            layer.mlp.fc2.bias.zero_()
    z = torch.randn(2, SMALL_CFG.n_patches + 1, SMALL_CFG.embed_dim)
    assert torch.equal(model.encoder_forward(z), z)


def test_encoder_is_permutation_equivariant():
    model = init_params(SMALL_CFG, seed=4)
    z = torch.randn(SMALL_CFG.n_patches + 1, SMALL_CFG.embed_dim)
    for key in range(5):
        perm = extend_for_class_token(gen_permutation(key, SMALL_CFG.n_patches))
        with torch.no_grad():
            permuted_out = model.encoder_forward(permute_rows(perm, z))
            out = model.encoder_forward(z)
        assert torch.allclose(permuted_out, permute_rows(perm, out), atol=1e-5)


def test_attention_rows_sum_to_one():
    model = init_params(SMALL_CFG, seed=5)
    x = torch.randn(3, SMALL_CFG.n_patches + 1, SMALL_CFG.embed_dim)
    weights = model.layers[0].attn.attention_weights(x)
    assert weights.shape == (3, SMALL_CFG.num_heads, SMALL_CFG.n_patches + 1, SMALL_CFG.n_patches + 1)
    assert torch.allclose(weights.sum(dim=-1), torch.ones(weights.shape[:-1]), atol=1e-6)


def test_non_finite_values_raise_with_layer():
    model = init_params(SMALL_CFG, seed=6)
    with torch.no_grad():
        model.pos_embedding[1, 0] = float('nan')
    try:
        model(random_images(SMALL_CFG, 1))
        assert False, "NaN debería producir NumericError"
    except NumericError as e:
        assert e.layer == 0


def test_uniform_logits_give_log_k():
    model = init_params(SMALL_CFG, seed=7)
    with torch.no_grad():
        model.head.weight.zero_()
        model.head.bias.zero_()
    labels = torch.tensor([0, 1, 2, 3])
    loss, _ = loss_and_grads(model, random_images(SMALL_CFG, 4), labels)
    assert abs(loss - math.log(SMALL_CFG.num_classes)) < 1e-6


def test_cross_entropy_rejects_bad_labels():
    logits = torch.zeros(2, 3)
    for labels in (torch.tensor([0, 3]), torch.tensor([-1, 0])):
        try:
            cross_entropy(logits, labels)
            assert False, "etiqueta fuera de rango debería fallar"
        except LabelError:
            pass


def test_accuracy():
    logits = torch.tensor([[2.0, 0.0], [0.0, 1.0], [3.0, 1.0], [0.0, 5.0]])
    assert accuracy(logits, torch.tensor([0, 1, 1, 0])) == 0.5
    labels = torch.tensor([2, 0, 1, 1])
    assert accuracy(torch.nn.functional.one_hot(labels, 3).float() * 10, labels) == 1.0


def test_gradients_match_finite_differences():
    model = init_params(GRAD_CFG, seed=8).double()
    generator = torch.Generator().manual_seed(1)
    with torch.no_grad():
        for param in model.parameters():
            param.add_(torch.randn(param.shape, dtype=torch.float64, generator=generator) * 0.3)
    images = random_images(GRAD_CFG, 4, seed=9).double()
    labels = torch.tensor([0, 1, 2, 1])
    _, grads = loss_and_grads(model, images, labels)

    h = 1e-6
    params = dict(model.named_parameters())
    for name, param in params.items():
        flat = param.data.view(-1)
        for index in range(flat.numel()):
            original = flat[index].item()
            with torch.no_grad():
                flat[index] = original + h
                plus = cross_entropy(model(images), labels).item()
                flat[index] = original - h
                minus = cross_entropy(model(images), labels).item()
                flat[index] = original
            numeric = (plus - minus) / (2 * h)
            analytic = grads[name].view(-1)[index].item()
            assert abs(numeric - analytic) <= 1e-6 + 1e-4 * abs(analytic), (name, index, numeric, analytic)


def test_zero_learning_rate_keeps_parameters():
    model = init_params(SMALL_CFG, seed=10)
    before = {k: v.clone() for k, v in model.state_dict().items()}
    _, grads = loss_and_grads(model, random_images(SMALL_CFG, 4), torch.tensor([0, 1, 2, 3]))
    sgd_step(model, grads, lr=0.0, momentum=0.9, weight_decay=0.0005)
    for name, value in model.state_dict().items():
        assert torch.equal(value, before[name]), name


def test_sgd_step_matches_torch_optimizer():
    reference = init_params(SMALL_CFG, seed=11)
    manual = init_params(SMALL_CFG, seed=11)
    optimizer = torch.optim.SGD(reference.parameters(), lr=0.1, momentum=0.9, weight_decay=0.01)
    state = None
    for step in range(3):
        images = random_images(SMALL_CFG, 4, seed=step)
        labels = torch.tensor([0, 1, 2, 3])

        optimizer.zero_grad()
        cross_entropy(reference(images), labels).backward()
        optimizer.step()

        _, grads = loss_and_grads(manual, images, labels)
        state = sgd_step(manual, grads, lr=0.1, momentum=0.9, weight_decay=0.01, state=state)

    for (name, a), (_, b) in zip(reference.named_parameters(), manual.named_parameters()):
        assert torch.allclose(a, b, atol=1e-6), name


def test_same_seed_same_parameters():
    a = init_params(SMALL_CFG, seed=12)
    b = init_params(SMALL_CFG, seed=12)
    c = init_params(SMALL_CFG, seed=13)
    for name, value in a.state_dict().items():
        assert torch.equal(value, b.state_dict()[name])
    assert not torch.equal(a.patch_embedding, c.patch_embedding)
    assert torch.count_nonzero(a.class_token) == 0
    assert torch.equal(a.norm.weight, torch.ones(SMALL_CFG.embed_dim))


def test_vitw_round_trip():
    model = init_params(SMALL_CFG, seed=14)
    images = random_images(SMALL_CFG, 2)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "model.vitw"
        save_params(model, path)
        loaded = load_params(path)
        assert list(read_vitw(path))[0] == "__config__"
        assert create_model(weights=str(path)).cfg == SMALL_CFG
    assert loaded.cfg == SMALL_CFG
    for name, value in model.state_dict().items():
        assert torch.equal(value, loaded.state_dict()[name]), name
    assert torch.equal(predict_logits(model, images), predict_logits(loaded, images))
    assert get_model_info(loaded)['parameters'] == model.get_num_params()


def test_vitw_rejects_bad_files():
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "bad.vitw"
        path.write_bytes(b"XXXX" + bytes(8))
        try:
            load_params(path)
            assert False, "magic inválido debería fallar"
        except FormatError as e:
            assert e.offset == 0

        save_params(init_params(SMALL_CFG), path)
        path.write_bytes(path.read_bytes()[:-10])
        try:
            load_params(path)
            assert False, "archivo truncado debería fallar"
        except FormatError:
            pass

        save_params(init_params(SMALL_CFG), path)
        other = ViTConfig(image_h=8, image_w=8, channels=3, patch_size=4, embed_dim=16,
                          num_heads=2, num_layers=1, mlp_dim=32, num_classes=5)
        try:
            load_params(path, other)
            assert False, "configuración distinta debería fallar"
        except ConfigurationError:
            pass


if __name__ == "__main__":
    print("🚀 Probando el Vision Transformer...\n")
    tests = [obj for name, obj in sorted(globals().items()) if name.startswith('test_') and callable(obj)]
    for test in tests:
        test()
        print(f"✅ {test.__name__}: OK")
    print(f"\n🎉 ¡{len(tests)} pruebas superadas!")
