import json

import numpy as np
import pytest

from introspect import explorer as ex
from introspect.classifier import SVMConfig, accuracy, l2_normalize, train_svm
from introspect.errors import DataError, ModelLoadError, TrainingError, UsageError
from introspect.featurizer import extract, gap
from introspect.raster import Window, crop
from introspect.synthetic import SynthConfig, class_signature, generate_synthetic
from introspect.trainkit import (StackConfig, load_groundtruth, load_image, load_manifest,
                                 load_model, parallel_map, save_model, train_stack)


@pytest.fixture(scope="module")
def converged_stack(suite_manifest, filter_bank):
    # 50 epochs leave E_1 short of its optimum on the suite; 400 reach it
    return train_stack(load_manifest(suite_manifest), filter_bank, StackConfig(epochs=400))


class TestSynthetic:
    def test_counts(self, tmp_path):
        m = generate_synthetic(tmp_path, SynthConfig(images_per_class=100, image_side=32))
        assert len(list((tmp_path / "images").glob("*.ppm"))) == 200
        rows = [json.loads(l) for l in m.read_text().splitlines()]
        assert len(rows) == 200
        assert sum(r["split"] == "test" for r in rows) == 100
        truth = load_groundtruth(tmp_path / "groundtruth.jsonl")
        assert len(truth) == 200

    def test_patch_below_receptive_field(self, tmp_path):
        with pytest.raises(UsageError):
            generate_synthetic(tmp_path, SynthConfig(patch_side=8), min_patch_side=12)

    def test_same_seed_identical_files(self, tmp_path):
        cfg = SynthConfig(images_per_class=4, image_side=32, seed=9)
        generate_synthetic(tmp_path / "a", cfg)
        generate_synthetic(tmp_path / "b", cfg)
        files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*")
                       if p.is_file())
        assert files
        for f in files:
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_patch_is_where_the_sidecar_says(self, tmp_path):
        cfg = SynthConfig(images_per_class=3, image_side=48, seed=1, shapes=0, speckles=0,
                          noise=0.0, patch_contrast=1.0)
        m = generate_synthetic(tmp_path, cfg)
        man = load_manifest(m)
        truth = load_groundtruth(tmp_path / "groundtruth.jsonl")
        for e in man.entries:
            img = load_image(e)
            g = truth[e.key]
            x0, y0 = int(g["cx"] - 8), int(g["cy"] - 8)
            patch = crop(img, Window(x0, y0, 16, 16))
            # stripes swing between dark and light; the flat background does not
            assert np.ptp(patch) > 0.5
            outside = img.copy()
            outside[y0:y0 + 16, x0:x0 + 16] = outside[0, 0]
            assert np.abs(outside - outside[0, 0]).max() < 0.05

    def test_class_signatures(self):
        assert class_signature(0, 2)[0] == 0.0 and class_signature(1, 2)[0] == 90.0
        a, b = class_signature(0, 4, orientations=2), class_signature(2, 4, orientations=2)
        assert a[0] == b[0] and a[1] != b[1]


class TestManifest:
    def test_relative_paths_resolve(self, small_dataset):
        man = load_manifest(small_dataset)
        assert man.classes == ["class0", "class1"]
        assert all(e.path.exists() for e in man.entries)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DataError):
            load_manifest(tmp_path / "none.jsonl")

    def test_bad_json_line(self, tmp_path):
        (tmp_path / "m.jsonl").write_text('{"path": "a.ppm", "label": "x", "split": "train"}\n{oops\n')
        with pytest.raises(DataError, match="m.jsonl:2"):
            load_manifest(tmp_path / "m.jsonl")

    def test_bad_split(self, tmp_path):
        (tmp_path / "m.jsonl").write_text('{"path": "a.ppm", "label": "x", "split": "dev"}\n')
        with pytest.raises(DataError, match="split"):
            load_manifest(tmp_path / "m.jsonl")

    def test_unreadable_image(self, tmp_path, filter_bank):
        (tmp_path / "m.jsonl").write_text(
            '{"path": "gone.ppm", "label": "a", "split": "train"}\n'
            '{"path": "gone2.ppm", "label": "b", "split": "train"}\n')
        with pytest.raises(DataError, match="gone"):
            train_stack(load_manifest(tmp_path / "m.jsonl"), filter_bank)

    def test_empty_class(self, small_dataset, filter_bank):
        man = load_manifest(small_dataset)
        man.entries = [e for e in man.entries if not (e.label == "class1" and e.split == "train")]
        with pytest.raises(TrainingError, match="class1"):
            train_stack(man, filter_bank)


class TestTrainStack:
    def test_single_iteration(self, small_dataset, filter_bank):
        stack = train_stack(load_manifest(small_dataset), filter_bank,
                            StackConfig(iterations=1, input_side=64, epochs=20))
        assert len(stack.classifiers) == 1 and len(stack.early) == 1
        # the length-1 early-fusion data are E_0's normalised features
        e0, f1 = stack.classifiers[0], stack.early[0]
        np.testing.assert_array_equal(e0.weights, f1.weights)
        np.testing.assert_array_equal(e0.biases, f1.biases)

    def test_shapes(self, small_stack):
        assert len(small_stack.classifiers) == 3 and len(small_stack.early) == 3
        assert all(c.weights.shape == (2, 32) for c in small_stack.classifiers)
        assert not small_stack.early[1].normalize_input

    def test_logged_accuracies_reproduce(self, small_dataset, small_stack, filter_bank, tmp_path):
        save_model(small_stack, tmp_path / "m.json")
        stack = load_model(tmp_path / "m.json")
        man = load_manifest(small_dataset)
        train = man.split("train")
        labels = np.array([man.label_index(e) for e in train])
        windows = stack.training["windows"]
        routes = []
        for e in train:
            img = load_image(e)
            feats = []
            for x0, y0, w, h in windows[e.key]:
                v = ex.view_window(img, Window(x0, y0, w, h), filter_bank, 64)
                feats.append(v.feature)
            routes.append(feats)
        logged = stack.training["accuracies"]
        for t, clf in enumerate(stack.classifiers):
            x = np.array([r[t] for r in routes])
            assert accuracy(clf, x, labels) == logged["per_iteration"][t]
        for n, clf in enumerate(stack.early, start=1):
            x = np.array([np.mean([l2_normalize(f) for f in r[:n]], axis=0) for r in routes])
            assert accuracy(clf, x, labels) == logged["early_fusion"][n - 1]

    def test_training_chain_matches_greedy_exploration(self, small_dataset, small_stack,
                                                       filter_bank):
        man = load_manifest(small_dataset)
        for e in man.split("train")[:4]:
            tree = ex.explore(load_image(e), small_stack, filter_bank,
                              small_stack.config.explore_config())
            replay = ex.load_tree(ex.serialize_tree(tree))
            got = [[n.window.x0, n.window.y0, n.window.w, n.window.h] for n in replay.nodes]
            assert got == small_stack.training["windows"][e.key]

    def test_parallel_equals_serial(self, small_dataset, filter_bank, monkeypatch):
        cfg = StackConfig(iterations=2, input_side=64, epochs=10)
        monkeypatch.setenv("INTROSPECT_THREADS", "1")
        a = train_stack(load_manifest(small_dataset), filter_bank, cfg)
        monkeypatch.setenv("INTROSPECT_THREADS", "4")
        b = train_stack(load_manifest(small_dataset), filter_bank, cfg)
        for ca, cb in zip(a.classifiers + a.early, b.classifiers + b.early):
            np.testing.assert_array_equal(ca.weights, cb.weights)

    def test_parallel_map_keeps_order(self, monkeypatch):
        monkeypatch.setenv("INTROSPECT_THREADS", "3")
        assert parallel_map(lambda x: x * x, range(10)) == [x * x for x in range(10)]

    @pytest.mark.slow
    def test_generator_is_separable_at_the_patch(self, suite_manifest, filter_bank):
        man = load_manifest(suite_manifest)
        truth = load_groundtruth(suite_manifest.parent / "groundtruth.jsonl")
        train = man.split("train")
        labels = np.array([man.label_index(e) for e in train])
        crops = []
        for e in train:
            g = truth[e.key]
            win = Window(int(g["cx"] - 8), int(g["cy"] - 8), 16, 16)
            crops.append(gap(extract(filter_bank, crop(load_image(e), win))))
        crops = np.array(crops)
        assert accuracy(train_svm(crops, labels, SVMConfig()), crops, labels) == 1.0

    @pytest.mark.slow
    def test_zoomed_stages_fit_the_training_set(self, converged_stack):
        accs = converged_stack.training["accuracies"]["per_iteration"]
        assert len(accs) == 4
        assert min(accs[1:]) >= 0.95

    @pytest.mark.slow
    @pytest.mark.xfail(strict=True, reason="the whole-image stage cannot reach 95%: the exact "
                       "hinge-loss optimum at lambda=1e-4 fits 92.5% of the suite's training set")
    def test_whole_image_stage_fits_the_training_set(self, converged_stack):
        assert converged_stack.training["accuracies"]["per_iteration"][0] >= 0.95


class TestPersistence:
    def test_round_trip_predictions(self, small_dataset, small_stack, filter_bank, tmp_path):
        save_model(small_stack, tmp_path / "m.json")
        back = load_model(tmp_path / "m.json")
        assert (tmp_path / "m.json.weights").exists()
        man = load_manifest(small_dataset)
        for e in man.split("test")[:3]:
            img = load_image(e)
            a = ex.select_route(ex.explore(img, small_stack, filter_bank,
                                           small_stack.config.explore_config()))
            b = ex.select_route(ex.explore(img, back, back.extractor,
                                           back.config.explore_config()))
            np.testing.assert_array_equal(ex.fuse_early_accum(a, small_stack.early).scores,
                                          ex.fuse_early_accum(b, back.early).scores)

    def test_same_seed_identical_files(self, small_dataset, filter_bank, tmp_path):
        cfg = StackConfig(iterations=2, input_side=64, epochs=10, seed=3)
        for name in ("a", "b"):
            (tmp_path / name).mkdir()
            save_model(train_stack(load_manifest(small_dataset), filter_bank, cfg),
                       tmp_path / name / "m.json")
        for f in ("m.json", "m.json.weights"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_tampered_weights(self, small_stack, tmp_path):
        save_model(small_stack, tmp_path / "m.json")
        blob = bytearray((tmp_path / "m.json.weights").read_bytes())
        blob[-1] ^= 1
        (tmp_path / "m.json.weights").write_bytes(bytes(blob))
        with pytest.raises(ModelLoadError, match="hash mismatch"):
            load_model(tmp_path / "m.json")

    def _edit(self, small_stack, tmp_path, fn):
        save_model(small_stack, tmp_path / "m.json")
        doc = json.loads((tmp_path / "m.json").read_text())
        fn(doc)
        (tmp_path / "m.json").write_text(json.dumps(doc))
        return tmp_path / "m.json"

    def test_missing_first_classifier(self, small_stack, tmp_path):
        p = self._edit(small_stack, tmp_path, lambda d: d.update(classifiers=[]))
        with pytest.raises(ModelLoadError, match="E_0"):
            load_model(p)

    def test_version_mismatch(self, small_stack, tmp_path):
        p = self._edit(small_stack, tmp_path, lambda d: d.update(format_version=99))
        with pytest.raises(ModelLoadError, match="version"):
            load_model(p)

    def test_shape_mismatch(self, small_stack, tmp_path):
        def drop(d):
            d["classifiers"][1]["weights"][0].pop()
        with pytest.raises(ModelLoadError, match="E_1"):
            load_model(self._edit(small_stack, tmp_path, drop))

    def test_no_temp_files_left(self, small_stack, tmp_path):
        save_model(small_stack, tmp_path / "m.json")
        assert sorted(p.name for p in tmp_path.iterdir()) == ["m.json", "m.json.weights"]
