import json

import numpy as np
import pytest

import oracles
from conftest import png_bytes, solid
from cuavid.errors import IngestionError, InvalidInputError
from cuavid.trajectory import (
    JudgmentLabel,
    build_keyframe_video,
    extract_frame,
    extract_grid,
    load_manifest,
    manifest_text,
    mean_rgb_extractor,
    pad_to_multiple,
    parse_manifest,
    uniform_sample,
    uniform_sample_indices,
    validate_record,
    write_manifest,
)


def record_of(images, **kw):
    return build_keyframe_video([{"screenshot": png_bytes(img)} for img in images], **kw)


def test_build_keyframe_video_timestamps():
    rec = record_of([solid(8, 8, (0, 0, 0))] * 3)
    assert [s.timestamp for s in rec.steps] == [0, 1, 2]
    assert [s.step_index for s in rec.steps] == [0, 1, 2]


def test_build_keyframe_video_empty():
    with pytest.raises(IngestionError):
        build_keyframe_video([])


def test_build_keyframe_video_missing_screenshot_names_step():
    with pytest.raises(IngestionError, match="step 1"):
        build_keyframe_video([{"screenshot": b"x"}, {"action": "click"}])


def test_build_keyframe_video_keeps_everything():
    rec = build_keyframe_video([{"screenshot": f"s{k}.png"} for k in range(150)])
    assert len(rec.steps) == 150


def test_uniform_sample_identity():
    assert uniform_sample_indices(5, 100) == [0, 1, 2, 3, 4]
    rec = build_keyframe_video([{"screenshot": f"s{k}.png"} for k in range(5)])
    assert uniform_sample(rec, 100) is rec


def test_uniform_sample_small():
    assert uniform_sample_indices(5, 3) == [0, 2, 4]


def test_uniform_sample_199():
    idx = uniform_sample_indices(199, 100)
    assert len(idx) == 100
    assert all(a < b for a, b in zip(idx, idx[1:]))
    assert idx[0] == 0 and idx[-1] == 198


@pytest.mark.parametrize("length", [101, 150, 199, 250, 1000, 12345])
def test_uniform_sample_strictly_increasing(length):
    idx = uniform_sample_indices(length, 100)
    assert len(idx) == 100 and len(set(idx)) == 100
    assert idx == sorted(idx) and idx[0] == 0 and idx[-1] == length - 1


def test_uniform_sample_rejects_small_budget():
    with pytest.raises(InvalidInputError):
        uniform_sample_indices(10, 1)


def test_uniform_sample_preserves_timestamps_and_is_idempotent():
    rec = build_keyframe_video([{"screenshot": f"s{k}.png"} for k in range(30)])
    once = uniform_sample(rec, 7)
    assert [s.timestamp for s in once.steps] == uniform_sample_indices(30, 7)
    assert uniform_sample(once, 7) is once


def test_extract_solid_red():
    rec = record_of([solid(32, 32, (255, 0, 0))])
    grid = extract_grid(rec, patch_size=16)
    assert grid.shape == (1, 2, 2, 3)
    assert np.array_equal(grid.data[0].reshape(4, 3), np.tile([1.0, 0.0, 0.0], (4, 1)))


def test_extract_half_black_half_white():
    img = np.zeros((32, 32, 3), dtype=np.uint8)
    img[:, 16:] = 255
    grid = extract_grid(record_of([img]), patch_size=16)
    assert grid.tokens()[0].tolist() == [[0, 0, 0], [1, 1, 1], [0, 0, 0], [1, 1, 1]]


def test_extract_matches_pixel_mean_oracle():
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, size=(48, 32, 3), dtype=np.uint8)
    feats = extract_frame(img, 16)
    assert np.allclose(feats, oracles.pixel_means(img, 16), atol=1e-6)


def test_extract_stacks_frames():
    rng = np.random.default_rng(1)
    imgs = [rng.integers(0, 256, size=(32, 48, 3), dtype=np.uint8) for _ in range(3)]
    grid = extract_grid(record_of(imgs), patch_size=16)
    for t in range(3):
        single = extract_grid(record_of([imgs[t]]), patch_size=16)
        assert np.array_equal(single.data[0], grid.data[t])


def test_pad_with_edge_replication():
    img = np.arange(5 * 3, dtype=np.uint8).reshape(5, 3, 1)
    padded = pad_to_multiple(img, 4)
    assert padded.shape == (8, 4, 1)
    assert np.array_equal(padded[5:, :3, 0], np.tile(img[4, :, 0], (3, 1)))
    assert np.array_equal(padded[:5, 3, 0], img[:, 2, 0])


def test_extract_non_divisible_resolution():
    grid = extract_grid(record_of([solid(20, 40, (0, 255, 0))]), patch_size=16)
    assert grid.shape == (1, 2, 3, 3)
    assert np.allclose(grid.data, [0, 1, 0])


def test_extract_mixed_resolution():
    with pytest.raises(InvalidInputError):
        extract_grid(record_of([solid(16, 16, (0, 0, 0)), solid(32, 16, (0, 0, 0))]), patch_size=16)


def test_extract_undecodable():
    rec = build_keyframe_video([{"screenshot": b"not an image"}])
    with pytest.raises(IngestionError):
        extract_grid(rec)


def test_extract_resize_720p():
    grid = extract_grid(record_of([solid(90, 160, (0, 0, 255))]), patch_size=16, resize_720p=True)
    assert grid.shape == (1, 45, 80, 3)


def test_custom_extractor():
    def grey(image, patch):
        h, w, _ = image.shape
        return image.reshape(h // patch, patch, w // patch, patch, 3).mean(axis=(1, 3, 4))[..., None]

    grid = extract_grid(record_of([solid(32, 32, (30, 60, 90))]), extractor=grey, patch_size=16)
    assert grid.dim == 1 and np.allclose(grid.data, 60)


def test_manifest_load_and_round_trip(make_trajectory_dir, tmp_path):
    path = make_trajectory_dir([
        {"frames": [solid(16, 16, (0, 0, 0)), solid(16, 16, (9, 9, 9))],
         "label": {"success": False, "error_interval": [1, 1], "justification": "wrong"}},
        {"frames": [solid(16, 16, (1, 2, 3))], "platform": "android", "label": {"success": True}},
    ])
    records = load_manifest(path)
    assert len(records) == 2
    assert records[0].label == JudgmentLabel(False, (1, 1), "wrong")
    assert records[1].platform == "android"

    text = manifest_text(records, relative_to=path.parent)
    again = parse_manifest(text, base_dir=path.parent)
    assert manifest_text(again, relative_to=path.parent) == text

    out = tmp_path / "elsewhere" / "store.json"
    out.parent.mkdir()
    write_manifest(out, records)
    moved = load_manifest(out)
    assert [r.keyframe_bytes(s) for r in moved for s in r.steps] == \
        [r.keyframe_bytes(s) for r in records for s in r.steps]


def test_manifest_embedded_bytes_round_trip():
    rec = record_of([solid(8, 8, (5, 5, 5))], instruction="x", platform="mac-win")
    text = manifest_text([rec])
    assert "image_b64" in text
    back = parse_manifest(text)
    assert back[0].steps[0].keyframe == rec.steps[0].keyframe
    assert manifest_text(back) == text


def test_manifest_missing_image_names_step(make_trajectory_dir):
    path = make_trajectory_dir([{"frames": [solid(8, 8, (0, 0, 0))] * 3}])
    data = json.loads(path.read_text())
    (path.parent / data[0]["steps"][2]["image"]).unlink()
    with pytest.raises(IngestionError, match="step 2"):
        load_manifest(path)


def test_manifest_rejects_bad_interval_and_platform(make_trajectory_dir):
    path = make_trajectory_dir([{"frames": [solid(8, 8, (0, 0, 0))] * 2,
                                 "label": {"success": False, "error_interval": [1, 9]}}])
    with pytest.raises(IngestionError, match="interval"):
        load_manifest(path)
    path = make_trajectory_dir([{"frames": [solid(8, 8, (0, 0, 0))], "platform": "beos"}], name="m2.json")
    with pytest.raises(InvalidInputError):
        load_manifest(path)


def test_validate_rejects_non_increasing_steps():
    rec = build_keyframe_video([{"screenshot": png_bytes(solid(4, 4, (0, 0, 0)))}] * 2)
    from dataclasses import replace

    bad = replace(rec, steps=(rec.steps[1], rec.steps[0]))
    with pytest.raises(IngestionError):
        validate_record(bad)


def test_mean_rgb_range():
    img = np.full((16, 16, 3), 255, dtype=np.uint8)
    assert mean_rgb_extractor(img, 16).max() == 1.0
