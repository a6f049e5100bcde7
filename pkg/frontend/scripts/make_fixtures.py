"""Capture service fixtures for the frontend test suite.

Runs the real HTTP app in-process on the synthetic 4-view scene with the
target-oracle provider, records the JSON the UI would see (view list, a
placement round trip, a full job lifecycle with loss records), and checks
at capture time that the /place response matches a direct geometry call.

    python3 scripts/make_fixtures.py [--out tests/fixtures]
"""

import argparse
import json
import time
from pathlib import Path

import numpy as np
from fastapi.testclient import TestClient

from scenegen.geometry import ClickSelection, box_to_text, build_box
from scenegen.guidance import TargetOracleProvider
from scenegen.scene_cache import make_desk_cache
from scenegen.service import create_app

CLICKS = [[32.0, 40.0], [24.0, 40.0], [28.0, 32.0]]
RATIOS = [1.2, 1.2, 1.2]

# The scripted browser clicks: the 64 px view is displayed at 2x inside a
# rect offset by (10, 20), so display = offset + 2 * image coordinate.
DISPLAY_RECT = {"left": 10.0, "top": 20.0, "width": 128.0, "height": 128.0}

JOB_CONFIG = {
    "total_steps": 40, "n_samples": 8, "provider_size": 32,
    "use_style": False, "preview_every": 0, "checkpoint_every": 0,
    "grid": {"n_levels": 4, "table_size_log2": 12},
}


def capture_place(client, cache):
    resp = client.post("/place", json={"view_id": 0, "clicks": CLICKS,
                                       "size_ratios": RATIOS})
    resp.raise_for_status()
    data = resp.json()

    view = cache.view(0)
    sel = ClickSelection(0, tuple((u, v) for u, v in CLICKS), tuple(RATIOS))
    box = build_box(sel, view.camera, view.depth_lookup)
    assert data["box"] == box_to_text(box), "service box != geometry box"
    assert np.allclose(data["center"], box.center, atol=0), "center drifted"

    display_clicks = [[DISPLAY_RECT["left"] + 2.0 * u,
                       DISPLAY_RECT["top"] + 2.0 * v] for u, v in CLICKS]
    return {
        "display": {"rect": DISPLAY_RECT, "clicks": display_clicks,
                    "image_size": [view.camera.width, view.camera.height]},
        "request": {"view_id": 0, "clicks": CLICKS, "size_ratios": RATIOS},
        "response": data,
        "geometry_box": box_to_text(box),
    }


def capture_job(client, box_text):
    resp = client.post("/jobs", json={"prompt": "a ceramic coffee mug",
                                      "box": box_text,
                                      "config": JOB_CONFIG})
    resp.raise_for_status()
    first = resp.json()
    job_id = first["job_id"]

    snapshots = [first]
    deadline = time.time() + 120.0
    while time.time() < deadline:
        snap = client.get(f"/jobs/{job_id}").json()
        if snap["state"] != snapshots[-1]["state"] \
                or snap["step"] != snapshots[-1]["step"]:
            snapshots.append(snap)
        if snap["state"] in ("completed", "failed", "cancelled"):
            break
        time.sleep(0.01)
    states = [s["state"] for s in snapshots]
    assert states[0] == "pending" and states[-1] == "completed", states
    assert "running" in states, "poll never saw the job running"

    losses = client.get(f"/jobs/{job_id}/losses").json()
    steps = [r["step"] for r in losses["records"]]
    assert steps == sorted(set(steps)), "loss steps not increasing"

    # Thin the step-by-step snapshots; keep every state transition plus a
    # few mid-run frames so the dashboard test has realistic progress.
    keep = [snapshots[0]]
    for snap in snapshots[1:]:
        if snap["state"] != keep[-1]["state"] \
                or snap["step"] - keep[-1]["step"] >= 10:
            keep.append(snap)
    if keep[-1] is not snapshots[-1]:
        keep.append(snapshots[-1])
    return {"job_id": job_id, "snapshots": keep, "losses": losses}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default=Path(__file__).parent.parent
                    / "tests" / "fixtures", type=Path)
    ap.add_argument("--jobs-root", default="/tmp/fixture_jobs")
    args = ap.parse_args()

    cache = make_desk_cache(size=64, n_views=4)

    def oracle_factory(cfg):
        target = np.full((cfg.provider_size, cfg.provider_size, 3), 0.4,
                         np.float32)
        return TargetOracleProvider(target, cfg.schedule)

    app = create_app(cache, provider_factory=oracle_factory,
                     jobs_root=args.jobs_root)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    with TestClient(app) as client:
        views = client.get("/views").json()
        place = capture_place(client, cache)
        job = capture_job(client, place["response"]["box"])

    for name, data in [("views", views), ("place", place), ("job", job)]:
        path = out / f"{name}.json"
        path.write_text(json.dumps(data, indent=1) + "\n")
        print(f"wrote {path} ({path.stat().st_size} bytes)")


if __name__ == "__main__":
    main()
