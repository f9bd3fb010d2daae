#!/usr/bin/env python3
"""
Pruebas de la adaptación del ViT a imágenes cifradas.
"""

import csv
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np
import torch

sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from src.adapt import (AdaptedModel, adapt_model, adapt_patch_embedding, adapt_pos_embedding,
                       load_adapted, revert_adaptation, save_adapted, verify_equivalence)
from src.blockcodec import EncryptionKeys, encrypt_image, shuffle_pixels
from src.errors import ConfigurationError
from src.keyperm import MASK64, derive_keys, extend_for_class_token, gen_permutation, permute_rows
from src.metrics import loss_and_grads, sgd_step
from src.models import ViTConfig, init_params

SMALL_CFG = ViTConfig(image_h=8, image_w=8, channels=3, patch_size=4, embed_dim=16,
                      num_heads=2, num_layers=2, mlp_dim=32, num_classes=5)


def random_images(cfg: ViTConfig, count: int, seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    return [rng.random(cfg.image_shape, dtype=np.float32) for _ in range(count)]


def scaled_model(cfg: ViTConfig, seed: int, std: float = 0.3):
    """Modelo con pesos grandes para que claves erróneas den logits claramente distintos."""
    model = init_params(cfg, seed)
    generator = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for param in model.parameters():
            param.add_(torch.randn(param.shape, generator=generator) * std)
    return model


def test_identity_keys_give_identical_logits():
    model = init_params(SMALL_CFG, seed=0)
    keys = EncryptionKeys.identity_keys(SMALL_CFG.patch_size)
    report = verify_equivalence(model, adapt_model(model, keys), random_images(SMALL_CFG, 5), keys)
    assert report.all_passed
    assert report.aggregate_max == 0.0


def test_adapted_embedding_is_row_permutation():
    model = scaled_model(SMALL_CFG, seed=1)
    keys = EncryptionKeys(k1=3, k2=4, p=SMALL_CFG.patch_size)
    adapted = adapt_model(model, keys).model
    token_perm = extend_for_class_token(gen_permutation(3, SMALL_CFG.n_patches))
    for image in random_images(SMALL_CFG, 4, seed=1):
        with torch.no_grad():
            plain = model.embed(torch.from_numpy(image))[0]
            encrypted = adapted.embed(torch.from_numpy(encrypt_image(image, keys)))[0]
        assert torch.allclose(encrypted, permute_rows(token_perm, plain), atol=1e-5)
        assert torch.equal(encrypted[0], plain[0])


def test_pixel_shuffle_cancels_with_adapted_patch_embedding():
    rng = np.random.default_rng(2)
    E = torch.from_numpy(rng.normal(size=(SMALL_CFG.patch_dim, SMALL_CFG.embed_dim)))
    blocks = rng.random((10, SMALL_CFG.patch_dim))
    for k2 in (0, 5, MASK64):
        adapted_E = adapt_patch_embedding(E, k2)
        shuffled = torch.from_numpy(shuffle_pixels(blocks, k2))
        assert torch.allclose(shuffled @ adapted_E, torch.from_numpy(blocks) @ E, atol=1e-10)


def test_adapt_pos_embedding_keeps_class_row():
    pos = torch.randn(SMALL_CFG.n_patches + 1, SMALL_CFG.embed_dim)
    adapted = adapt_pos_embedding(pos, 9)
    perm = gen_permutation(9, SMALL_CFG.n_patches)
    assert torch.equal(adapted[0], pos[0])
    for i, j in enumerate(perm.map):
        assert torch.equal(adapted[i + 1], pos[j + 1])
    assert torch.equal(adapt_pos_embedding(pos, None), pos)


def test_equivalence_over_many_keys():
    model = scaled_model(SMALL_CFG, seed=3)
    images = random_images(SMALL_CFG, 5, seed=3)
    for seed in range(10):
        k1, k2 = derive_keys(seed)
        keys = EncryptionKeys(k1=k1, k2=k2, p=SMALL_CFG.patch_size)
        report = verify_equivalence(model, adapt_model(model, keys), images, keys, tol=1e-4)
        assert report.all_passed, (seed, report.aggregate_max)


def test_equivalence_on_default_config():
    cfg = ViTConfig()
    model = init_params(cfg, seed=4)
    images = random_images(cfg, 100, seed=4)
    for seed in range(100, 110):
        k1, k2 = derive_keys(seed)
        keys = EncryptionKeys(k1=k1, k2=k2, p=cfg.patch_size)
        report = verify_equivalence(model, adapt_model(model, keys), images, keys)
        assert report.all_passed, (seed, report.aggregate_max)


def test_single_step_modes():
    model = scaled_model(SMALL_CFG, seed=5)
    images = random_images(SMALL_CFG, 3, seed=5)
    for mode in ('block', 'pixel'):
        keys = EncryptionKeys.for_mode(mode, 11, 12, SMALL_CFG.patch_size)
        report = verify_equivalence(model, adapt_model(model, keys), images, keys)
        assert report.all_passed, mode


def test_wrong_keys_fail():
    model = scaled_model(SMALL_CFG, seed=6)
    images = random_images(SMALL_CFG, 100, seed=6)
    keys = EncryptionKeys(k1=100, k2=200, p=SMALL_CFG.patch_size)
    wrong = EncryptionKeys(k1=100, k2=201, p=SMALL_CFG.patch_size)
    assert gen_permutation(200, SMALL_CFG.patch_dim) != gen_permutation(201, SMALL_CFG.patch_dim)
    report = verify_equivalence(model, adapt_model(model, keys), images, wrong)
    assert report.num_failed >= 99
    assert report.aggregate_max > 1e-2


def test_block_size_must_match_patch_size():
    model = init_params(SMALL_CFG)
    try:
        adapt_model(model, EncryptionKeys(k1=1, k2=2, p=2))
        assert False, "bloque distinto del patch debería fallar"
    except ConfigurationError:
        pass


def test_source_model_is_not_modified():
    model = init_params(SMALL_CFG, seed=7)
    before = model.pos_embedding.detach().clone()
    adapt_model(model, EncryptionKeys(k1=1, k2=2, p=SMALL_CFG.patch_size))
    assert torch.equal(model.pos_embedding, before)


def test_revert_adaptation():
    model = init_params(SMALL_CFG, seed=8)
    adapted = adapt_model(model, EncryptionKeys(k1=13, k2=14, p=SMALL_CFG.patch_size))
    reverted = revert_adaptation(adapted)
    for name, value in model.state_dict().items():
        assert torch.equal(reverted.state_dict()[name], value), name


def test_training_step_commutes_with_adaptation():
    source = scaled_model(SMALL_CFG, seed=9, std=0.1)
    keys = EncryptionKeys(k1=21, k2=22, p=SMALL_CFG.patch_size)
    adapted = adapt_model(source, keys)
    images = random_images(SMALL_CFG, 6, seed=9)
    labels = torch.tensor([0, 1, 2, 3, 4, 0])
    plain_batch = torch.from_numpy(np.stack(images))
    encrypted_batch = torch.from_numpy(np.stack([encrypt_image(x, keys) for x in images]))

    plain_state, encrypted_state = None, None
    for _ in range(2):
        plain_loss, grads = loss_and_grads(source, plain_batch, labels)
        plain_state = sgd_step(source, grads, lr=0.1, momentum=0.9, weight_decay=0.0005, state=plain_state)
        encrypted_loss, grads = loss_and_grads(adapted.model, encrypted_batch, labels)
        encrypted_state = sgd_step(adapted.model, grads, lr=0.1, momentum=0.9, weight_decay=0.0005,
                                   state=encrypted_state)
        assert abs(plain_loss - encrypted_loss) < 1e-5

    reverted = revert_adaptation(AdaptedModel(model=adapted.model, keys=keys))
    for name, value in source.state_dict().items():
        assert torch.allclose(reverted.state_dict()[name], value, atol=1e-5), name


def test_provenance_round_trip():
    model = init_params(SMALL_CFG, seed=10)
    keys = EncryptionKeys(k1=MASK64, k2=None, p=SMALL_CFG.patch_size)
    adapted = adapt_model(model, keys)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "adapted.vitw"
        sidecar = save_adapted(adapted, path)
        record = json.loads(sidecar.read_text())
        assert record == {'k1': str(MASK64), 'k2': None, 'p': str(SMALL_CFG.patch_size)}
        loaded = load_adapted(path)
    assert loaded.keys == keys
    assert torch.equal(loaded.model.pos_embedding, adapted.model.pos_embedding)


def test_report_csv():
    model = init_params(SMALL_CFG, seed=11)
    keys = EncryptionKeys(k1=1, k2=2, p=SMALL_CFG.patch_size)
    report = verify_equivalence(model, adapt_model(model, keys), random_images(SMALL_CFG, 3), keys)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "report.csv"
        report.to_csv(path, ['a.imgt', 'b.imgt', 'c.imgt'])
        with open(path, newline='') as f:
            rows = list(csv.reader(f))
    assert rows[0] == ['image_id', 'max_abs_diff', 'pass']
    assert [row[0] for row in rows[1:]] == ['a.imgt', 'b.imgt', 'c.imgt']
    assert all(row[2] == 'true' for row in rows[1:])


def test_non_positive_tolerance():
    model = init_params(SMALL_CFG)
    keys = EncryptionKeys.identity_keys(SMALL_CFG.patch_size)
    try:
        verify_equivalence(model, adapt_model(model, keys), random_images(SMALL_CFG, 1), keys, tol=0.0)
        assert False, "tolerancia 0 debería fallar"
    except ConfigurationError:
        pass


if __name__ == "__main__":
    print("🚀 Probando la adaptación del modelo...\n")
    tests = [obj for name, obj in sorted(globals().items()) if name.startswith('test_') and callable(obj)]
    for test in tests:
        test()
        print(f"✅ {test.__name__}: OK")
    print(f"\n🎉 ¡{len(tests)} pruebas superadas!")
