import logging

import pytest

from fewshotcc import dataio, synthcam, tasks

logging.getLogger("fewshotcc").setLevel(logging.ERROR)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """A small but trainable synthetic dataset shared across test modules:
    3 cameras x 40 scenes at 24x24, with its processed images and task index."""
    cfg = synthcam.SynthConfig(
        out_dir=tmp_path_factory.mktemp("smallset") / "data",
        cameras=3,
        scenes_per_camera=40,
        image_size=24,
        master_seed=5,
    )
    manifest_path = synthcam.generate_dataset(cfg)
    manifest = dataio.load_manifest(manifest_path)
    images = dataio.load_processed(manifest)
    index = tasks.build_task_index(images, m=2, min_task_size=12)
    return {
        "config": cfg,
        "manifest_path": manifest_path,
        "manifest": manifest,
        "images": images,
        "index": index,
    }
