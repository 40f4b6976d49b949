import math

import numpy as np
import pytest

from fewshotcc import synthcam, tasks
from fewshotcc.colorsci import IlluminantRGB
from fewshotcc.dataio import ProcessedImage, gamma_encode


def _image(pixels, camera="camA", image_id="img", valid=None):
    pixels = np.asarray(pixels, dtype=np.float32)
    if valid is None:
        valid = np.ones(pixels.shape[:2], dtype=bool)
    return ProcessedImage(
        pixels=pixels, valid=valid, camera_id=camera,
        gt_illuminant=IlluminantRGB(0.5, 0.5, 0.5), image_id=image_id,
    )


class TestImageCct:
    def test_uniform_gray_is_d65_like(self):
        img = _image(gamma_encode(np.full((8, 8, 3), 0.5)))
        cct = tasks.image_cct(img)
        # rgb (1,1,1) maps to the D65 white point; its CCT is ~6500 K
        assert cct == pytest.approx(6504, abs=150)

    def test_all_masked_rejected(self):
        img = _image(np.zeros((4, 4, 3)), valid=np.zeros((4, 4), dtype=bool))
        with pytest.raises(ValueError, match="valid"):
            tasks.image_cct(img)

    def test_black_image_rejected(self):
        with pytest.raises(ValueError):
            tasks.image_cct(_image(np.zeros((4, 4, 3))))

    def test_flat_synthetic_scene_near_nominal(self):
        css = synthcam.make_css(0, jitter=0.0)
        spd = synthcam.planckian_spd(5000)
        wl = css.table.wavelengths
        patches = synthcam.ReflectancePatchSet(
            curves=synthcam.SpectralTable(wl, np.ones((wl.size, 1))),
            assignment=np.zeros((8, 8), dtype=np.int64),
        )
        scene = synthcam.render_scene(css, spd, patches)
        img = _image(gamma_encode(scene.image.astype(np.float64)))
        assert tasks.image_cct(img) == pytest.approx(5000, abs=400)

    def test_off_locus_mean_rejected(self):
        # saturated green image: far from any blackbody color
        img = _image(np.tile(np.array([0.1, 0.9, 0.1], dtype=np.float32), (4, 4, 1)))
        with pytest.raises(ValueError, match="locus"):
            tasks.image_cct(img)


class TestHistogram:
    def test_m1_single_bin_holds_everything(self):
        hist = tasks.build_histogram("camA", [3000.0, 4000.0, 8000.0], 1)
        assert hist.m == 1 and hist.counts[0] == 3

    def test_m2_geometric_midpoint(self):
        hist = tasks.build_histogram("camA", [2500.0, 5200.0, 9000.0], 2)
        assert hist.edges[1] == pytest.approx(math.sqrt(2500.0 * 9000.0), rel=1e-9)
        assert hist.counts.sum() == 3

    def test_max_edge_widened_to_include_max(self):
        hist = tasks.build_histogram("camA", [3000.0, 9000.0], 2)
        assert tasks.assign_bin(hist.edges, 9000.0) == 1
        assert hist.edges[-1] > 9000.0

    def test_degenerate_range_modes(self):
        with pytest.raises(ValueError, match="bins"):
            tasks.build_histogram("camA", [5000.0, 5000.0], 2)
        hist = tasks.build_histogram("camA", [5000.0, 5000.0], 2, degenerate="single_bin")
        assert hist.m == 1 and hist.counts[0] == 2

    def test_insufficient_images(self):
        with pytest.raises(ValueError, match="< 3 bins"):
            tasks.build_histogram("camA", [4000.0, 6000.0], 3)

    def test_log_uniform_invariant_enforced(self):
        with pytest.raises(ValueError, match="log10"):
            tasks.CctHistogram("camA", np.array([2000.0, 3000.0, 9000.0]), np.array([1, 1]))

    def test_bin_assignment_boundaries(self):
        edges = np.array([2000.0, 4000.0, 8000.0])
        assert tasks.assign_bin(edges, 2000.0) == 0
        assert tasks.assign_bin(edges, 3999.0) == 0
        assert tasks.assign_bin(edges, 4000.0) == 0  # shared interior edge -> lower bin
        assert tasks.assign_bin(edges, 4001.0) == 1
        assert tasks.assign_bin(edges, 8000.0) == 1
        with pytest.raises(ValueError):
            tasks.assign_bin(edges, 1999.0)
        with pytest.raises(ValueError):
            tasks.assign_bin(edges, 8001.0)


class TestAssignTasks:
    def _ccts(self, cameras=3, per_bin=25):
        rng = np.random.default_rng(0)
        out = {}
        for c in range(cameras):
            cam = f"cam{c}"
            warm = {f"{cam}/w{i}": float(rng.uniform(2800, 3600)) for i in range(per_bin)}
            cold = {f"{cam}/c{i}": float(rng.uniform(6000, 8000)) for i in range(per_bin)}
            out[cam] = {**warm, **cold}
        return out

    def test_all_bins_populated_gives_m_times_cameras(self):
        ccts = self._ccts()
        hists = {c: tasks.build_histogram(c, list(v.values()), 2) for c, v in ccts.items()}
        specs = tasks.assign_tasks(ccts, hists, min_task_size=20)
        assert len(specs) == 6  # M * number of cameras

    def test_undersized_bin_dropped(self, caplog):
        ccts = {"camA": {f"w{i}": 3000.0 + i for i in range(4)} | {f"c{i}": 7000.0 + i for i in range(25)}}
        hists = {"camA": tasks.build_histogram("camA", list(ccts["camA"].values()), 2)}
        with caplog.at_level("WARNING", logger="fewshotcc.tasks"):
            specs = tasks.assign_tasks(ccts, hists, min_task_size=20)
        assert len(specs) == 1
        assert "dropping task" in caplog.text

    def test_partition_property(self):
        ccts = self._ccts(cameras=2, per_bin=8)
        hists = {c: tasks.build_histogram(c, list(v.values()), 2) for c, v in ccts.items()}
        specs = tasks.assign_tasks(ccts, hists, min_task_size=1)
        seen = [m for t in specs for m in t.member_ids]
        assert sorted(seen) == sorted(i for v in ccts.values() for i in v)
        assert len(seen) == len(set(seen))


class TestKnnTask:
    members = {"a": 3000.0, "b": 4000.0, "c": 5000.0, "d": 6000.0}

    def test_exhaustive(self):
        task = tasks.knn_task(self.members, 4500.0, 4, "camA")
        assert set(task.member_ids) == set(self.members)

    def test_anchor_below_everything(self):
        task = tasks.knn_task(self.members, 1000.0, 2, "camA")
        assert set(task.member_ids) == {"a", "b"}

    def test_hand_checkable_distances(self):
        task = tasks.knn_task(self.members, 4900.0, 2, "camA")
        assert set(task.member_ids) == {"c", "b"}  # |5000-4900|=100, |4000-4900|=900

    def test_tie_broken_by_id(self):
        members = {"z": 4000.0, "a": 6000.0}
        task = tasks.knn_task(members, 5000.0, 1, "camA")
        assert task.member_ids == ("a",)

    def test_insufficient(self):
        with pytest.raises(ValueError):
            tasks.knn_task(self.members, 5000.0, 9, "camA")


class TestSampleEpisode:
    task = tasks.TaskSpec(camera_id="camA", member_ids=tuple(f"i{k}" for k in range(20)), bin_index=0)

    def test_exact_partition(self):
        ep = tasks.sample_episode(self.task, 10, 10, np.random.default_rng(0))
        assert len(ep.support_ids) == 10 and len(ep.query_ids) == 10
        assert set(ep.support_ids) | set(ep.query_ids) == set(self.task.member_ids)

    def test_deterministic(self):
        a = tasks.sample_episode(self.task, 5, 5, np.random.default_rng(9))
        b = tasks.sample_episode(self.task, 5, 5, np.random.default_rng(9))
        assert a.support_ids == b.support_ids and a.query_ids == b.query_ids

    def test_query_can_be_empty(self):
        ep = tasks.sample_episode(self.task, 7, 0, np.random.default_rng(0))
        assert len(ep.support_ids) == 7 and ep.query_ids == ()

    def test_insufficient_population(self):
        with pytest.raises(ValueError):
            tasks.sample_episode(self.task, 15, 10, np.random.default_rng(0))

    def test_disjointness_enforced_by_type(self):
        with pytest.raises(ValueError):
            tasks.Episode(task=self.task, support_ids=("i1",), query_ids=("i1",))


class TestDumpLoad:
    def test_round_trip(self, tmp_path):
        specs = [
            tasks.TaskSpec("camA", ("x", "y", "z"), bin_index=1, cct_lo=3000.0, cct_hi=6000.0),
            tasks.TaskSpec("camB", ("p", "q"), anchor_cct=4500.0),
        ]
        path = tmp_path / "tasks.jsonl"
        tasks.dump_tasks(specs, path)
        assert tasks.load_tasks(path) == specs
