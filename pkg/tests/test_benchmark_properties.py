"""Properties that need the trained desk-benchmark model (session fixtures).

These ride along with the acceptance run: vote redundancy under random cue
removal, and the semantic alignment of learned concept channels with the
generating proto patterns.
"""
import numpy as np

from deepvote import io
from deepvote.detect import run_scene
from deepvote.explain import top_responses_per_concept
from deepvote.ops import conv2d_forward
from deepvote.synth import SynthConfig, _sample_placement, pattern_cells


class TestVoteRedundancy:
    def test_argmax_stable_under_30pct_cue_removal(self, desk_root, desk_model,
                                                   desk_detect_cfg):
        """Zeroing <= 30% of fired concept responses rarely moves part peaks."""
        model, scale_reg, _ = desk_model
        rng = np.random.default_rng(424242)
        moved = 0
        trials = 0
        scenes = io.load_split(desk_root / "data" / "test_l0")[:20]
        for grid, ann in scenes:
            out = run_scene(model, scale_reg, grid, ann, desk_detect_cfg)
            y_used = out.cache.concept_used
            z = out.cache.part_map
            fired = np.argwhere(y_used > 0)
            for _ in range(3):
                drop = rng.random(len(fired)) < 0.3
                y2 = y_used.copy()
                idx = fired[drop]
                y2[idx[:, 0], idx[:, 1], idx[:, 2]] = 0.0
                z2 = conv2d_forward(y2, model.voting)
                for s in range(model.num_parts):
                    trials += 1
                    if np.argmax(z[:, :, s]) != np.argmax(z2[:, :, s]):
                        moved += 1
        assert trials >= 300
        assert moved / trials < 0.20, f"argmax moved in {moved}/{trials} trials"


class TestTrainedDetector:
    def test_every_l0_part_matched(self, desk_root, desk_model, desk_detect_cfg):
        """Trained model finds every part of an unoccluded scene at IoU >= 0.5."""
        from deepvote.evaluate import iou

        model, scale_reg, _ = desk_model
        scenes = io.load_split(desk_root / "data" / "test_l0")[:10]
        for grid, ann in scenes:
            dets = run_scene(model, scale_reg, grid, ann, desk_detect_cfg).detections
            for part in ann.parts:
                matched = any(
                    d.part_id == part.part_id and iou(d.box, part.box) >= 0.5
                    for d in dets
                )
                assert matched, f"{ann.image_id} part {part.part_id} missed"

    def test_pure_noise_scene_yields_no_detections(self, desk_model, desk_detect_cfg):
        """Negative control: a random normalized grid fires nothing above tau."""
        model, scale_reg, _ = desk_model
        rng = np.random.default_rng(31337)
        grid = rng.standard_normal((28, 28, model.feature_dim)).astype(np.float32)
        grid /= np.linalg.norm(grid, axis=-1, keepdims=True)
        dets = run_scene(model, scale_reg, grid, None, desk_detect_cfg).detections
        assert dets == []

    def test_inference_deterministic(self, desk_root, desk_model, desk_detect_cfg):
        model, scale_reg, _ = desk_model
        grid, ann = io.load_split(desk_root / "data" / "test_l2")[0]
        a = run_scene(model, scale_reg, grid, ann, desk_detect_cfg).detections
        b = run_scene(model, scale_reg, grid, ann, desk_detect_cfg).detections
        assert [(d.part_id, d.box, d.score, d.peak) for d in a] == \
               [(d.part_id, d.box, d.score, d.peak) for d in b]


class TestConceptAlignment:
    def test_top_responses_sit_on_their_patterns(self, desk_root, desk_flat,
                                                 desk_model, desk_template):
        """Strongly pattern-aligned concepts fire on that pattern's cells."""
        model, _, _ = desk_model
        cfg = SynthConfig.from_flat(desk_flat)
        manifest = io.read_json(desk_root / "data" / "manifest.json")

        true_cells = {}
        for i, seed in enumerate(manifest["seeds"]["test"]):
            rng = np.random.default_rng(seed)
            scale, pos = _sample_placement(cfg, desk_template, rng)
            true_cells[f"test_{i:05d}"] = dict(pattern_cells(desk_template, pos, scale))

        l0 = io.load_split(desk_root / "data" / "test_l0")
        tops = top_responses_per_concept(model, [(ann.image_id, grid) for grid, ann in l0],
                                         n=10)
        cw = model.concept.weights[0, 0]
        cw_n = cw / np.linalg.norm(cw, axis=0, keepdims=True)

        aligned = 0
        passed = 0
        for pat in desk_template.patterns:
            scores = pat.vector @ cw_n
            k = int(np.argmax(scores))
            if scores[k] < 0.7:
                continue
            aligned += 1
            hits = sum(
                1 for row in tops[k]
                if true_cells[row["image_id"]].get(pat.pattern_id) == tuple(row["cell"])
            )
            if hits >= 8:
                passed += 1
        assert aligned >= 1, "expected at least one strongly aligned concept"
        assert passed == aligned, f"{passed}/{aligned} aligned concepts pass"
