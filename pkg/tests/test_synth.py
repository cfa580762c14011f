"""Scene synthesizer tests: templates, rendering, occlusion, dataset output."""
import numpy as np
import pytest

from deepvote.errors import ConfigError, GenerationError
from deepvote.scene import GRID_STRIDE, validate_annotation
from deepvote.synth import (ObjectTemplate, SynthConfig, apply_occlusion,
                            dataset_generate, generate_template,
                            occlusion_ratio_from_boxes, pattern_cells,
                            render_scene)


@pytest.fixture(scope="module")
def template():
    return generate_template(123, num_parts=3, num_patterns=9, feature_dim=64)


class TestGenerateTemplate:
    def test_minimal_template_pattern_radius(self):
        t = generate_template(0, num_parts=1, num_patterns=3, feature_dim=32)
        assert len(t.patterns) == 3
        px, py = t.parts[0][1]
        for p in t.patterns:
            dist = max(abs(p.offset[0] - px), abs(p.offset[1] - py))
            assert 1 <= dist <= 7

    def test_same_seed_identical(self):
        a = generate_template(5, 2, 6, 48)
        b = generate_template(5, 2, 6, 48)
        assert [p.offset for p in a.patterns] == [p.offset for p in b.patterns]
        for pa, pb in zip(a.patterns, b.patterns):
            np.testing.assert_array_equal(pa.vector, pb.vector)
        np.testing.assert_array_equal(a.surface, b.surface)

    def test_gram_separation(self):
        t = generate_template(9, num_parts=6, num_patterns=20, feature_dim=256)
        vecs = t.separation_vectors()
        gram = vecs @ vecs.T
        off_diag = gram - np.diag(np.diag(gram))
        assert float(np.abs(off_diag).max()) < 0.3

    def test_every_part_has_three_close_patterns(self, template):
        for part_id, (px, py) in template.parts:
            close = [
                p for p in template.patterns
                if 1 <= max(abs(p.offset[0] - px), abs(p.offset[1] - py)) <= 7
            ]
            assert len(close) >= 3

    def test_too_few_patterns_rejected(self):
        with pytest.raises(GenerationError):
            generate_template(0, num_parts=3, num_patterns=8, feature_dim=32)


class TestRenderScene:
    def test_pattern_cells_carry_their_vectors(self, template):
        grid, ann = render_scene(template, 1.0, (6, 6), noise_sigma=0.0, rng_seed=0)
        for pat_id, (cx, cy) in pattern_cells(template, (6, 6), 1.0):
            vec = template.patterns[pat_id].vector
            dot = float(grid[cy, cx].astype(np.float64) @ vec)
            assert dot > 0.95, f"pattern {pat_id} dot {dot}"

    def test_empty_template_is_pure_noise(self):
        t = ObjectTemplate(parts=[], patterns=[], extent=(6, 6),
                           surface=np.ones(16, np.float32) / 4.0,
                           context=None, part_box_sizes=[])
        grid, ann = render_scene(t, 1.0, (2, 2), noise_sigma=0.1, rng_seed=1,
                                 grid_w=12, grid_h=12)
        assert ann.parts == []
        norms = np.linalg.norm(grid.astype(np.float64), axis=-1)
        np.testing.assert_allclose(norms, 1.0, atol=1e-5)

    def test_half_scale_halves_pairwise_distances(self, template):
        _, ann_full = render_scene(template, 1.0, (6, 6), 0.0, 0, grid_w=32, grid_h=32)
        _, ann_half = render_scene(template, 0.5, (6, 6), 0.0, 0, grid_w=32, grid_h=32)
        by_id_full = {p.part_id: p.center for p in ann_full.parts}
        by_id_half = {p.part_id: p.center for p in ann_half.parts}
        ids = sorted(by_id_full)
        for i in ids:
            for j in ids:
                if i >= j:
                    continue
                d_full = np.hypot(by_id_full[i][0] - by_id_full[j][0],
                                  by_id_full[i][1] - by_id_full[j][1])
                d_half = np.hypot(by_id_half[i][0] - by_id_half[j][0],
                                  by_id_half[i][1] - by_id_half[j][1])
                # +/- 1 cell of rounding slack per endpoint
                assert abs(d_half - d_full / 2.0) <= 2 * GRID_STRIDE

    def test_scale_sweep_preserves_offset_ordering(self, template):
        centers = {}
        for s in (0.5, 0.75, 1.0, 1.25):
            _, ann = render_scene(template, s, (4, 4), 0.0, 0, grid_w=40, grid_h=40)
            centers[s] = {p.part_id: p.center for p in ann.parts}
            assert sorted(p.part_id for p in ann.parts) == [0, 1, 2]
        base = centers[1.0]
        ids = sorted(base)
        base_order = sorted((i, j) for i in ids for j in ids if i < j)
        for s, cs in centers.items():
            for i, j in base_order:
                dx_base = base[j][0] - base[i][0]
                dx_s = cs[j][0] - cs[i][0]
                if abs(dx_base) > 2 * GRID_STRIDE:
                    assert np.sign(dx_s) == np.sign(dx_base) or dx_s == 0

    def test_out_of_bounds_raises(self, template):
        with pytest.raises(GenerationError):
            render_scene(template, 1.0, (20, 20), 0.0, 0, grid_w=28, grid_h=28)

    def test_annotation_geometry(self, template):
        grid, ann = render_scene(template, 1.0, (6, 6), 0.05, rng_seed=3)
        assert ann.object_box == (96.0, 96.0, 224.0, 224.0)
        assert ann.scale_ratio == pytest.approx(14 / 28)
        for p in ann.parts:
            assert p.center[0] % GRID_STRIDE == 0
            assert p.center[1] % GRID_STRIDE == 0
        validate_annotation(ann)


class TestApplyOcclusion:
    def test_level_one_band_and_count(self, template):
        grid, ann = render_scene(template, 1.0, (6, 6), 0.02, rng_seed=4)
        _, occ_ann = apply_occlusion(grid, ann, template, level=1, rng_seed=5)
        assert len(occ_ann.occlusion.boxes) == 2
        assert 0.2 <= occ_ann.occlusion.ratio < 0.4
        validate_annotation(occ_ann)

    def test_level_three_band_and_count(self, template):
        grid, ann = render_scene(template, 1.0, (6, 6), 0.02, rng_seed=6)
        _, occ_ann = apply_occlusion(grid, ann, template, level=3, rng_seed=7)
        assert len(occ_ann.occlusion.boxes) == 4
        assert 0.6 <= occ_ann.occlusion.ratio < 0.8

    def test_occluded_cells_unrelated_to_patterns(self, template):
        grid, ann = render_scene(template, 1.0, (6, 6), 0.02, rng_seed=8)
        occ_grid, occ_ann = apply_occlusion(grid, ann, template, level=2, rng_seed=9)
        protos = np.stack([p.vector for p in template.patterns])
        changed = np.any(occ_grid != grid, axis=-1)
        ys, xs = np.nonzero(changed)
        assert len(ys) > 0
        dots = np.abs(occ_grid[ys, xs].astype(np.float64) @ protos.T)
        assert float(dots.max()) < 0.5

    def test_ratio_matches_recomputation(self, template):
        grid, ann = render_scene(template, 1.0, (6, 6), 0.02, rng_seed=10)
        _, occ_ann = apply_occlusion(grid, ann, template, level=2, rng_seed=11)
        recomputed = occlusion_ratio_from_boxes(
            occ_ann.object_box, occ_ann.occlusion.boxes, grid.shape[1], grid.shape[0])
        assert recomputed == occ_ann.occlusion.ratio

    def test_part_ground_truth_preserved(self, template):
        grid, ann = render_scene(template, 1.0, (6, 6), 0.02, rng_seed=12)
        _, occ_ann = apply_occlusion(grid, ann, template, level=3, rng_seed=13)
        assert [p.to_dict() for p in occ_ann.parts] == [p.to_dict() for p in ann.parts]

    def test_rejects_already_occluded(self, template):
        grid, ann = render_scene(template, 1.0, (6, 6), 0.02, rng_seed=14)
        occ_grid, occ_ann = apply_occlusion(grid, ann, template, level=1, rng_seed=15)
        with pytest.raises(ConfigError):
            apply_occlusion(occ_grid, occ_ann, template, level=1, rng_seed=16)

    def test_invalid_level(self, template):
        grid, ann = render_scene(template, 1.0, (6, 6), 0.02, rng_seed=17)
        with pytest.raises(ConfigError):
            apply_occlusion(grid, ann, template, level=4, rng_seed=18)


@pytest.fixture(scope="module")
def small_cfg():
    return SynthConfig(n_train=3, n_test=2, feature_dim=32, num_parts=2,
                       num_patterns=6, seed=21)


class TestDatasetGenerate:

    def test_file_counts(self, small_cfg, tmp_path_factory):
        out = tmp_path_factory.mktemp("data")
        manifest = dataset_generate(small_cfg, out)
        assert len(list((out / "train").glob("*.dvfm"))) == 3
        for lvl in range(4):
            assert len(list((out / f"test_l{lvl}").glob("*.dvfm"))) == 2
            assert len(list((out / f"test_l{lvl}").glob("*.json"))) == 2
        assert (out / "manifest.json").is_file()
        assert manifest["counts"] == {"train": 3, "test_per_level": 2}

    def test_rerun_is_byte_identical(self, small_cfg, tmp_path_factory):
        out_a = tmp_path_factory.mktemp("data_a")
        out_b = tmp_path_factory.mktemp("data_b")
        dataset_generate(small_cfg, out_a)
        dataset_generate(small_cfg, out_b)
        files_a = sorted(p.relative_to(out_a) for p in out_a.rglob("*") if p.is_file())
        files_b = sorted(p.relative_to(out_b) for p in out_b.rglob("*") if p.is_file())
        assert files_a == files_b
        for rel in files_a:
            assert (out_a / rel).read_bytes() == (out_b / rel).read_bytes(), rel

    def test_all_annotations_validate(self, small_cfg, tmp_path_factory):
        from deepvote import io
        out = tmp_path_factory.mktemp("data_v")
        dataset_generate(small_cfg, out)
        for split in ["train", "test_l0", "test_l1", "test_l2", "test_l3"]:
            for base in io.list_scene_bases(out / split):
                _, ann = io.load_scene(base)
                validate_annotation(ann)
                for p in ann.parts:
                    cell = (p.center[0] / GRID_STRIDE, p.center[1] / GRID_STRIDE)
                    assert 0 <= cell[0] < small_cfg.grid_w
                    assert 0 <= cell[1] < small_cfg.grid_h
