import json

import numpy as np
import pytest
import torch

from segedit import data, training
from segedit.data import SegmentationDataset, make_triple, sample_box, write_dataset
from segedit.losses import CombinedTerms
from segedit.training import (
    NonFiniteLossError,
    TrainConfig,
    bind_palette,
    init_state,
    load_checkpoint,
    lr_at,
    one_hot_labels,
    run_training,
    save_checkpoint,
    train_step,
)


@pytest.fixture(scope="module")
def tiny_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny")
    rng = np.random.default_rng(50)
    palette = data.default_palette()
    maps = data.synthesize_shapes(8, 32, 32, rng, palette)
    write_dataset(root, maps, maps[:2], palette, data.DEFAULT_SIZE_THRESHOLD)
    return SegmentationDataset.load(root, "train")


def quick_config(**overrides):
    base = dict(
        variant="a-mex", epochs=2, batch_size=4, q=1, alpha=4, beta=4,
        seed=3, checkpoint_every=1,
    )
    base.update(overrides)
    return TrainConfig(**base)


def fixed_batches(dataset, n_batches, batch_size=4, seed=99):
    rng = np.random.default_rng(seed)
    spec = dataset.spec()
    batches = []
    for _ in range(n_batches):
        triples = []
        i = 0
        while len(triples) < batch_size:
            labels = dataset.maps[i % len(dataset)]
            box = sample_box(labels, spec, rng)
            i += 1
            if box is None:
                continue
            triples.append(make_triple(labels, box, dataset.palette))
        batches.append(triples)
    return batches


class TestLrSchedule:
    def test_paper_defaults(self):
        cfg = TrainConfig()
        assert lr_at(0, cfg) == 2e-4
        assert lr_at(99, cfg) == 2e-4
        assert lr_at(150, cfg) == pytest.approx(1e-4)
        assert lr_at(200, cfg) == 0.0

    def test_non_increasing_piecewise_linear(self):
        cfg = TrainConfig()
        values = [lr_at(e, cfg) for e in range(cfg.epochs + 1)]
        diffs = np.diff(values)
        assert (diffs <= 1e-12).all()
        assert np.allclose(values[:100], 2e-4)
        decay = diffs[100:]
        assert np.allclose(decay, decay[0])

    def test_out_of_range(self):
        cfg = TrainConfig()
        for epoch in (-1, 201):
            with pytest.raises(ValueError, match="outside"):
                lr_at(epoch, cfg)

    def test_decay_start_resolution(self):
        assert TrainConfig(epochs=30).resolved_decay_start == 30
        assert TrainConfig(epochs=150).resolved_decay_start == 100
        assert TrainConfig(epochs=150, decay_start=20).resolved_decay_start == 20

    def test_decay_start_equals_epochs(self):
        cfg = TrainConfig(epochs=5, decay_start=5)
        assert lr_at(4, cfg) == cfg.lr
        assert lr_at(5, cfg) == 0.0


class TestTrainConfig:
    def test_rejects_bad_values(self):
        with pytest.raises(ValueError, match="variant"):
            TrainConfig(variant="mexx")
        with pytest.raises(ValueError, match="epochs"):
            TrainConfig(epochs=0)
        with pytest.raises(ValueError, match="batch_size"):
            TrainConfig(batch_size=0)
        with pytest.raises(ValueError, match="lr"):
            TrainConfig(lr=0.0)
        with pytest.raises(ValueError, match="decay_start"):
            TrainConfig(epochs=10, decay_start=11)

    def test_dict_roundtrip(self):
        cfg = quick_config(variant="mex", q=2)
        assert TrainConfig.from_dict(cfg.to_dict()) == cfg

    def test_unknown_field_rejected(self):
        with pytest.raises(ValueError, match="unknown"):
            TrainConfig.from_dict({"variant": "mex", "learning": 1})

    def test_discriminator_counts_per_variant(self):
        assert TrainConfig(variant="basic").expansion_disc_count() == 0
        assert TrainConfig(variant="gl", q=4).expansion_disc_count() == 1
        assert TrainConfig(variant="mex", q=4).expansion_disc_count() == 5
        assert TrainConfig(variant="a-mex", q=4).expansion_disc_count() == 1

    def test_gl_is_q0_cropped_alias(self):
        sched = TrainConfig(variant="gl", q=4).schedule
        assert sched.q == 0 and sched.cropped
        amex = TrainConfig(variant="a-mex", q=3).schedule
        assert amex.q == 3 and not amex.cropped
        assert TrainConfig(variant="basic").schedule is None


class TestOneHot:
    def test_planes_partition_image(self, tiny_dataset):
        labels = tiny_dataset.maps[0]
        planes = one_hot_labels(labels, tiny_dataset.palette)
        assert planes.shape == (len(tiny_dataset.palette), 32, 32)
        np.testing.assert_array_equal(planes.sum(axis=0), np.ones((32, 32)))
        for i, cat in enumerate(tiny_dataset.palette.categories):
            np.testing.assert_array_equal(planes[i] == 1.0, labels == cat.id)

    def test_unknown_label_rejected(self, tiny_dataset):
        labels = np.full((8, 8), 250, dtype=np.uint8)
        with pytest.raises(ValueError, match="outside the palette"):
            one_hot_labels(labels, tiny_dataset.palette)


def fresh_state(dataset, config):
    state = init_state(config, len(dataset.palette))
    return bind_palette(state, dataset.palette)


class TestTrainStep:
    def test_basic_variant_report_has_no_expansion_entries(self, tiny_dataset):
        cfg = quick_config(variant="basic")
        state = fresh_state(tiny_dataset, cfg)
        [batch] = fixed_batches(tiny_dataset, 1)
        report = train_step(batch, state, cfg)
        for key in ("adv_gen", "fea", "pec", "disc_global", "gen_total", "disc_total", "lr"):
            assert key in report
        assert "mex_gen" not in report
        assert "disc_expansion" not in report

    def test_expansion_variant_report_has_expansion_entries(self, tiny_dataset):
        cfg = quick_config(variant="mex", q=1)
        state = fresh_state(tiny_dataset, cfg)
        [batch] = fixed_batches(tiny_dataset, 1)
        report = train_step(batch, state, cfg)
        assert "mex_gen" in report and "disc_expansion" in report

    def test_same_seed_same_step0_losses(self, tiny_dataset):
        cfg = quick_config(variant="mex", q=1)
        [batch] = fixed_batches(tiny_dataset, 1)
        r1 = train_step(batch, fresh_state(tiny_dataset, cfg), cfg)
        r2 = train_step(batch, fresh_state(tiny_dataset, cfg), cfg)
        assert r1 == r2

    def test_lambda4_zero_matches_basic_generator_trajectory(self, tiny_dataset):
        batches = fixed_batches(tiny_dataset, 3)
        cfg_zero = quick_config(variant="a-mex", lambda4=0.0, q=2)
        cfg_basic = quick_config(variant="basic", lambda4=0.0)
        state_zero = fresh_state(tiny_dataset, cfg_zero)
        state_basic = fresh_state(tiny_dataset, cfg_basic)
        for batch in batches:
            rz = train_step(batch, state_zero, cfg_zero)
            rb = train_step(batch, state_basic, cfg_basic)
            assert rz == rb
        za = state_zero.generator.state_dict()
        ba = state_basic.generator.state_dict()
        for key in za:
            assert torch.equal(za[key], ba[key]), key

    def test_gl_equals_mex_q0(self, tiny_dataset):
        batches = fixed_batches(tiny_dataset, 2)
        cfg_gl = quick_config(variant="gl", q=4)
        cfg_mex = quick_config(variant="mex", q=0)
        state_gl = fresh_state(tiny_dataset, cfg_gl)
        state_mex = fresh_state(tiny_dataset, cfg_mex)
        for batch in batches:
            assert train_step(batch, state_gl, cfg_gl) == train_step(batch, state_mex, cfg_mex)
        for a, b in zip(
            state_gl.generator.state_dict().values(),
            state_mex.generator.state_dict().values(),
        ):
            assert torch.equal(a, b)

    def test_both_networks_update_encoder_does_not(self, tiny_dataset):
        cfg = quick_config(variant="a-mex", q=1)
        state = fresh_state(tiny_dataset, cfg)
        g_before = {k: v.clone() for k, v in state.generator.state_dict().items()}
        d_before = {k: v.clone() for k, v in state.global_disc.state_dict().items()}
        e_before = {k: v.clone() for k, v in state.encoder.state_dict().items()}
        [batch] = fixed_batches(tiny_dataset, 1)
        train_step(batch, state, cfg)
        assert any(
            not torch.equal(v, state.generator.state_dict()[k]) for k, v in g_before.items()
        )
        assert any(
            not torch.equal(v, state.global_disc.state_dict()[k]) for k, v in d_before.items()
        )
        assert all(
            torch.equal(v, state.encoder.state_dict()[k]) for k, v in e_before.items()
        )

    def test_nonfinite_generator_aborts(self, tiny_dataset):
        cfg = quick_config(variant="basic")
        state = fresh_state(tiny_dataset, cfg)
        with torch.no_grad():
            for p in state.generator.parameters():
                p.fill_(float("nan"))
        [batch] = fixed_batches(tiny_dataset, 1)
        with pytest.raises(NonFiniteLossError, match="non-finite"):
            train_step(batch, state, cfg)

    def test_unbound_palette_rejected(self, tiny_dataset):
        cfg = quick_config(variant="basic")
        state = init_state(cfg, len(tiny_dataset.palette))
        [batch] = fixed_batches(tiny_dataset, 1)
        with pytest.raises(RuntimeError, match="palette"):
            train_step(batch, state, cfg)


class TestRunTraining:
    def test_run_directory_layout(self, tiny_dataset, tmp_path):
        cfg = quick_config(epochs=2)
        run_dir = tmp_path / "run"
        final = run_training(tiny_dataset, cfg, run_dir)
        assert final == run_dir / "checkpoints" / "epoch_2"
        assert final.exists()
        assert (run_dir / "checkpoints" / "epoch_1").exists()
        stored = json.loads((run_dir / "config.json").read_text())
        assert TrainConfig.from_dict(stored) == cfg

        lines = [json.loads(l) for l in (run_dir / "log.jsonl").read_text().splitlines()]
        assert lines, "log must contain one object per step"
        assert [l["step"] for l in lines] == list(range(len(lines)))
        for line in lines:
            for key in ("step", "epoch", "lr", "gen_total", "disc_total"):
                assert key in line
        assert lines[0]["lr"] == cfg.lr

    def test_resume_reproduces_next_step_losses(self, tiny_dataset, tmp_path):
        cfg = quick_config(epochs=3, q=1)
        full_dir = tmp_path / "full"
        run_training(tiny_dataset, cfg, full_dir)
        full_log = [
            json.loads(l) for l in (full_dir / "log.jsonl").read_text().splitlines()
        ]

        resumed_dir = tmp_path / "resumed"
        run_training(
            tiny_dataset, cfg, resumed_dir,
            resume_from=full_dir / "checkpoints" / "epoch_2",
        )
        resumed_log = [
            json.loads(l) for l in (resumed_dir / "log.jsonl").read_text().splitlines()
        ]
        tail = [l for l in full_log if l["epoch"] == 2]
        assert resumed_log == tail

    def test_resume_rejects_config_mismatch(self, tiny_dataset, tmp_path):
        cfg = quick_config(epochs=1)
        run_dir = tmp_path / "run"
        final = run_training(tiny_dataset, cfg, run_dir)
        other = quick_config(epochs=1, seed=4)
        with pytest.raises(ValueError, match="config"):
            run_training(tiny_dataset, other, tmp_path / "bad", resume_from=final)

    def test_nonfinite_leaves_diagnostic_snapshot(self, tiny_dataset, tmp_path, monkeypatch):
        nan = torch.tensor(float("nan"))

        def poisoned(*args, **kwargs):
            return CombinedTerms(
                gen=nan, disc=nan, disc_global=nan, disc_expansion=None, parts={}
            )

        monkeypatch.setattr(training, "mexgan_loss", poisoned)
        cfg = quick_config(epochs=1)
        run_dir = tmp_path / "run"
        with pytest.raises(NonFiniteLossError):
            run_training(tiny_dataset, cfg, run_dir)
        assert (run_dir / "checkpoints" / "diagnostic_step_0").exists()

    def test_empty_dataset_rejected(self, tiny_dataset, tmp_path):
        empty = SegmentationDataset(
            root=tiny_dataset.root, split="train", palette=tiny_dataset.palette
        )
        with pytest.raises(ValueError, match="empty"):
            run_training(empty, quick_config(), tmp_path / "run")


class TestCheckpoint:
    def test_roundtrip_restores_everything(self, tiny_dataset, tmp_path):
        cfg = quick_config(variant="mex", q=1)
        state = fresh_state(tiny_dataset, cfg)
        [batch] = fixed_batches(tiny_dataset, 1)
        train_step(batch, state, cfg)
        path = tmp_path / "ckpt"
        save_checkpoint(state, path)

        loaded = load_checkpoint(path)
        assert loaded.step == state.step
        assert loaded.config == cfg
        for a, b in zip(
            state.generator.state_dict().values(), loaded.generator.state_dict().values()
        ):
            assert torch.equal(a, b)
        for da, db in zip(state.expansion_discs, loaded.expansion_discs):
            for a, b in zip(da.state_dict().values(), db.state_dict().values()):
                assert torch.equal(a, b)
        # rng stream continues identically
        assert state.data_rng.integers(1 << 30) == loaded.data_rng.integers(1 << 30)

    def test_rejects_unknown_version(self, tmp_path):
        path = tmp_path / "bad"
        torch.save({"version": 99}, path)
        with pytest.raises(ValueError, match="version"):
            load_checkpoint(path)


@pytest.fixture(scope="module")
def image_dataset(tmp_path_factory):
    from PIL import Image

    root = tmp_path_factory.mktemp("rgb")
    rng = np.random.default_rng(60)
    images_dir = root / "train" / "images"
    images_dir.mkdir(parents=True)
    for i in range(6):
        arr = rng.integers(0, 256, size=(32, 32, 3), dtype=np.uint8)
        Image.fromarray(arr).save(images_dir / f"img_{i:03d}.png")
    return data.InpaintingDataset.load(root, "train")


class TestInpainting:
    def test_masked_pixels_zeroed_in_condition(self, image_dataset):
        triples = data.test_inpaint_masking(image_dataset, test_seed=7)
        batch = training.inpaint_batch_from_triples(triples[:2])
        hole = batch.mask.bool().expand_as(batch.condition)
        assert torch.all(batch.condition[hole] == 0.0)
        assert torch.equal(batch.condition[~hole], batch.real[~hole])
        assert batch.gen_input.shape[1] == 4

    def test_run_produces_checkpoint_and_finite_losses(self, image_dataset, tmp_path):
        cfg = quick_config(task="inpainting", variant="a-mex", epochs=1)
        final = run_training(image_dataset, cfg, tmp_path / "run")
        assert final.exists()
        lines = (tmp_path / "run" / "log.jsonl").read_text().splitlines()
        assert len(lines) == 2  # 6 images, batch 4 -> batches of 4 and 2
        for line in lines:
            report = json.loads(line)
            assert np.isfinite(report["gen_total"])
            assert np.isfinite(report["disc_total"])
        state = load_checkpoint(final)
        assert state.condition_channels == 3
        assert state.palette is None

    def test_task_dataset_mismatch_rejected(self, image_dataset, tiny_dataset, tmp_path):
        with pytest.raises(ValueError, match="label-map"):
            run_training(image_dataset, quick_config(), tmp_path / "a")
        with pytest.raises(ValueError, match="RGB"):
            run_training(tiny_dataset, quick_config(task="inpainting"), tmp_path / "b")
