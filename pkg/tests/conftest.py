import io
import sys
import json

import numpy as np
import pytest
from PIL import Image


def png_bytes(array):
    buf = io.BytesIO()
    Image.fromarray(np.asarray(array, dtype=np.uint8)).save(buf, format="PNG")
    return buf.getvalue()


def solid(h, w, rgb):
    img = np.zeros((h, w, 3), dtype=np.uint8)
    img[:] = rgb
    return img


@pytest.fixture
def make_trajectory_dir(tmp_path):
    """Write PNG keyframes plus a manifest; returns the manifest path."""

    def _make(trajectories, name="manifest.json", subdir="data"):
        root = tmp_path / subdir
        root.mkdir(parents=True, exist_ok=True)
        items = []
        for n, traj in enumerate(trajectories):
            steps = []
            for k, img in enumerate(traj["frames"]):
                fname = f"traj{n}_step{k}.png"
                (root / fname).write_bytes(png_bytes(img))
                steps.append({"index": k, "image": fname, "t": k})
            item = {"instruction": traj.get("instruction", f"task {n}"),
                    "platform": traj.get("platform", "ubuntu-agent"),
                    "steps": steps}
            if "id" in traj:
                item = {"id": traj["id"], **item}
            if "label" in traj:
                item["label"] = traj["label"]
            items.append(item)
        path = root / name
        path.write_text(json.dumps(items, indent=2))
        return path

    return _make


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULT_LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
