"""Conformance of bridge output against the trainer's dataset contract.

A ten-item smoke corpus (synthetic images plus sidecars) is pushed through
the full extraction pipeline; every emitted line must parse under the
trainer's strict record validation, load as a dataset, and support an
end-to-end training run. Reruns must be byte-identical.
"""

import json

import numpy as np
import pytest
from PIL import Image

from newsbridge.extract import Toolchain, run_batch

D_VISUAL = 48

_TEXTS = [
    "Dallas Jones arrested after downtown protest",
    "Storm warning issued for Chicago suburbs",
    "Mayor Reyes opens the new harbor bridge",
    "Maria Lopez denies resignation rumors in Paris",
    "Crowd gathers outside the old courthouse",
    "Flooding hits New York transit overnight",
    "President Novak visits flood victims in Berlin",
    "Viral photo shows empty shelves at local market",
    "Ana Silva wins the regional marathon in Tokyo",
    "Officials dispute casualty figures from the rally",
]

_OCR_SIDECARS = {
    0: "BREAKING: suspect in custody",
    3: "Lopez press conference 9 AM",
    7: "SOLD OUT - no restock",
}

_LABEL_SIDECARS = {
    1: [{"name": "storm clouds", "kind": "concept", "confidence": 0.8}],
    4: [{"name": "Courthouse", "kind": "landmark", "confidence": 0.9},
        {"name": "crowd", "kind": "object", "confidence": 0.7}],
    8: [{"name": "Ana Silva", "kind": "face", "confidence": 0.95}],
}


def _paint(path, index):
    rng = np.random.default_rng(1000 + index)
    arr = np.zeros((64, 64, 3), np.uint8)
    style = index % 5
    if style == 0:      # skin-tone block
        arr[:, :] = (205, 150, 115)
    elif style == 1:    # saturated color
        arr[:, :] = (235, 40, 60)
    elif style == 2:    # checkerboard
        tiles = (np.indices((64, 64)).sum(axis=0) // 8) % 2
        arr[tiles == 1] = 255
    elif style == 3:    # flat gray
        arr[:, :] = 127
    else:               # seeded noise
        arr[:] = rng.integers(0, 256, arr.shape, dtype=np.uint8)
    Image.fromarray(arr).save(path)


@pytest.fixture(scope="module")
def smoke(tmp_path_factory):
    root = tmp_path_factory.mktemp("smoke")
    rows = ["id,text,image_path,label"]
    for i, text in enumerate(_TEXTS):
        image = root / f"img-{i:02d}.png"
        _paint(image, i)
        if i in _OCR_SIDECARS:
            (root / f"{image.name}.ocr.txt").write_text(_OCR_SIDECARS[i])
        if i in _LABEL_SIDECARS:
            (root / f"{image.name}.labels.json").write_text(json.dumps(_LABEL_SIDECARS[i]))
        rows.append(f"smoke-{i:02d},{text},{image},{i % 2}")
    manifest = root / "manifest.csv"
    manifest.write_text("\n".join(rows) + "\n")
    out = root / "posts.jsonl"
    report = run_batch(manifest, out, toolchain=Toolchain(d_visual=D_VISUAL))
    return manifest, out, report


def _banner(capsys, name, ok, detail):
    with capsys.disabled():
        print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


def test_every_record_passes_trainer_validation(smoke, capsys):
    from newsfusion.corpus import parse_record

    _, out, report = smoke
    lines = out.read_text().splitlines()
    errors = []
    posts = []
    for lineno, line in enumerate(lines, start=1):
        try:
            posts.append(parse_record(line, line_number=lineno, n_regions=49))
        except ValueError as exc:
            errors.append(str(exc))
    ok = report["successes"] == 10 and len(lines) == 10 and not errors
    _banner(capsys, "bridge conformance (validation)", ok,
            f"{len(lines)} records, {len(errors)} validation errors"
            + (f" (first: {errors[0]})" if errors else ""))
    assert all(p.visual_regions.shape == (49, D_VISUAL) for p in posts)
    assert sum(bool(p.ocr_text) for p in posts) >= len(_OCR_SIDECARS)
    assert any(e.kind == "person" for p in posts for e in p.textual_entities)
    assert any(p.visual_entities for p in posts)


def test_dataset_loads_and_model_trains(smoke, capsys):
    from newsfusion.corpus import load_dataset
    from newsfusion.model import ModelConfig, fit, init_model, predict

    _, out, _ = smoke
    posts = load_dataset(out, n_regions=49)
    config = ModelConfig(
        d=16, heads=2, l_max=48, dropout=0.0, batch_size=4, max_epochs=2,
        patience=5, lr=5e-3, seed=0, vocab_size=1024, n_enc_layers=1,
        mct_depth=1, d_visual=D_VISUAL, n_regions=49,
    )
    model = init_model(config)
    history = fit(posts, posts, model)
    preds = [predict(p, model) for p in posts]
    ok = (len(posts) == 10 and len(history) >= 1
          and all(np.isfinite([q.p_real, q.p_fake]).all() for q in preds))
    _banner(capsys, "bridge conformance (training)", ok,
            f"10 posts loaded, {len(history)} epochs, final loss "
            f"{history[-1].train_loss:.4f}")


def test_rerun_is_byte_identical(smoke, tmp_path):
    manifest, out, _ = smoke
    again = tmp_path / "again.jsonl"
    run_batch(manifest, again, toolchain=Toolchain(d_visual=D_VISUAL))
    assert again.read_bytes() == out.read_bytes()
