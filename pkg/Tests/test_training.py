import os
import tempfile
import unittest
from dataclasses import replace
from pathlib import Path
from unittest import mock

import numpy as np
from immutabledict import immutabledict

from core.errors import DatasetFormatError, DivergenceError, DomainError, ShapeMismatchError
from core.parallel import THREADS_ENV, chunk_bounds, map_chunks, resolve_threads, tree_reduce
from field.network import init_params
from metrics.image_quality import evaluate_images, mean_score
from optics.aperture import ApertureShape
from rendering.field_render import field_gradients, render_pinhole, render_view, sample_field
from rendering.scatter import ConcentratedPatch, render_scatter, scatter_backward, scatter_forward
from rendering.volume import composite_pinhole, concentrate_backward
from sampling.patches import patch_batch
from sampling.rays import random_ray_batch
from scenes.analytic import recovery_scene
from scenes.dataset import SceneDataset
from scenes.synthesis import make_recovery_dataset
from training.checkpoint import load_checkpoint, save_checkpoint
from training.config import TrainConfig, load_config
from training.optim import AdamState, adam_step, decayed_lr, mse_loss
from training.state import APERTURE_FLOOR, PerViewOptics, TrainState
from training.trainer import CHECKPOINT_NAME, LOG_COLUMNS, LOG_NAME, Trainer, defocus_loss, pinhole_loss, train

DESK_SCALE_ENV = "LENSFIELD_DESK_SCALE"

_TINY = dict(
    n_iters=4, n_pretrain=2, batch_size=32, n_samples=8, hidden_layers=2, hidden_width=16, pos_freqs=2, dir_freqs=1,
    patch_size=8, anchor_stride=4, r_max=3.0, threads=1, chunk_size=64, log_interval=1, decay_steps=10,
)


def _tiny_config(**overrides):
    return TrainConfig(**{**_TINY, **overrides})


def _tiny_dataset():
    return make_recovery_dataset(recovery_scene(), n_views=3, image_size=16, r_max=3.0)


def _perturbed(params, name, index, step):
    def shift(block_name, block):
        if block_name != name:
            return block
        moved = block.copy()
        moved[index] += step
        return moved

    return params.map_blocks(shift)


class TestConfig(unittest.TestCase):

    def test_defaults(self):
        config = TrainConfig()
        self.assertEqual((config.n_iters, config.n_pretrain, config.patch_size, config.anchor_stride), (5000, 2000, 16, 8))
        self.assertEqual((config.batch_size, config.n_samples, config.hidden_layers, config.hidden_width), (512, 32, 4, 32))
        self.assertEqual(config.resolved_guard, 8)
        self.assertEqual(config.resolved_decay_steps, 5000)
        self.assertEqual(config.lr, 5e-4)
        self.assertEqual(config.optics_lr, 1e-2)
        self.assertEqual(TrainConfig(lr_optics=None).optics_lr, config.lr)
        self.assertEqual(config.patch_spec.guard, 8)

    def test_gamma_defaults_to_dataset(self):
        self.assertIsNone(TrainConfig().gamma)
        self.assertEqual(TrainConfig().resolved_gamma(1.8), 1.8)
        self.assertEqual(TrainConfig(gamma=2.2).resolved_gamma(1.8), 2.2)

    def test_pretrain_bounded_by_iterations(self):
        with self.assertRaises(ValueError):
            TrainConfig(n_iters=10, n_pretrain=11)
        with self.assertRaises(DatasetFormatError):
            TrainConfig().with_overrides(n_iters=10)

    def test_overrides_skip_none(self):
        config = TrainConfig().with_overrides(n_iters=20, n_pretrain=5, seed=None)
        self.assertEqual((config.n_iters, config.n_pretrain, config.seed), (20, 5, 0))

    def test_load(self):
        with tempfile.TemporaryDirectory() as directory:
            path = Path(directory) / "train.toml"
            path.write_text("n_iters = 30\nn_pretrain = 10\nlearn_focus = false\n")
            config = load_config(path, n_pretrain=3, lr=None)
            self.assertEqual((config.n_iters, config.n_pretrain, config.learn_focus), (30, 3, False))
            self.assertEqual(config.lr, 5e-4)

            path.write_text("n_samples = 1\n")
            with self.assertRaises(DatasetFormatError) as context:
                load_config(path)
            self.assertEqual(context.exception.field, "n_samples")
            path.write_text("unknown_knob = 1\n")
            with self.assertRaises(DatasetFormatError):
                load_config(path)
            path.write_text("n_iters = \n")
            with self.assertRaises(DatasetFormatError):
                load_config(path)
            with self.assertRaises(DatasetFormatError):
                load_config(Path(directory) / "missing.toml")
        self.assertEqual(load_config(None).n_iters, 5000)


class TestOptim(unittest.TestCase):

    def test_mse(self):
        loss, grad = mse_loss(np.array([1.0, 2.0]), np.array([0.0, 0.0]))
        self.assertEqual(loss, 2.5)
        np.testing.assert_allclose(grad, [1.0, 2.0])
        with self.assertRaises(ShapeMismatchError):
            mse_loss(np.zeros(2), np.zeros(3))

    def test_first_adam_step_is_lr_sized(self):
        params = immutabledict({"w": np.array([1.0, -2.0, 0.5])})
        grads = immutabledict({"w": np.array([3.0, -1e-3, 0.0])})
        updated, state = adam_step(AdamState.zeros(params), params, grads, 0.1)
        np.testing.assert_allclose(updated["w"], [0.9, -1.9, 0.5], atol=1e-5)
        self.assertEqual(state.step, 1)
        np.testing.assert_array_equal(params["w"], [1.0, -2.0, 0.5])

    def test_steps_are_bounded(self):
        rng = np.random.default_rng(0)
        params = immutabledict({"w": rng.normal(size=10)})
        state = AdamState.zeros(params)
        for _ in range(20):
            grads = immutabledict({"w": rng.normal(size=10) * 100.0})
            updated, state = adam_step(state, params, grads, 0.01)
            self.assertLess(float(np.max(np.abs(updated["w"] - params["w"]))), 0.01 * 3.5)
            params = updated

    def test_deterministic(self):
        params = immutabledict({"w": np.array([0.3, 0.7])})
        grads = immutabledict({"w": np.array([0.1, -0.2])})
        first = adam_step(AdamState.zeros(params), params, grads, 0.05)
        second = adam_step(AdamState.zeros(params), params, grads, 0.05)
        np.testing.assert_array_equal(first[0]["w"], second[0]["w"])
        np.testing.assert_array_equal(first[1].v["w"], second[1].v["w"])

    def test_key_mismatch(self):
        params = immutabledict({"w": np.zeros(2)})
        with self.assertRaises(ShapeMismatchError):
            adam_step(AdamState.zeros(params), params, immutabledict({"b": np.zeros(2)}), 0.1)
        with self.assertRaises(ShapeMismatchError):
            adam_step(AdamState.zeros(params), params, immutabledict({"w": np.zeros(3)}), 0.1)

    def test_decayed_lr(self):
        self.assertEqual(decayed_lr(1e-3, 0, 100), 1e-3)
        self.assertAlmostEqual(decayed_lr(1e-3, 100, 100), 1e-4, places=15)
        self.assertAlmostEqual(decayed_lr(1e-3, 50, 100), 1e-3 / np.sqrt(10.0), places=15)


class TestParallel(unittest.TestCase):

    def test_resolve_threads(self):
        self.assertEqual(resolve_threads(3), 3)
        with mock.patch.dict(os.environ, {THREADS_ENV: "5"}):
            self.assertEqual(resolve_threads(), 5)
            self.assertEqual(resolve_threads(2), 2)
        with mock.patch.dict(os.environ, {THREADS_ENV: "many"}):
            with self.assertRaises(DomainError):
                resolve_threads()
        with mock.patch.dict(os.environ, {THREADS_ENV: "0"}):
            with self.assertRaises(DomainError):
                resolve_threads()
        with mock.patch.dict(os.environ, {}, clear=True):
            self.assertGreaterEqual(resolve_threads(), 1)
        with self.assertRaises(DomainError):
            resolve_threads(0)

    def test_chunk_bounds(self):
        self.assertEqual(chunk_bounds(10, 4), [(0, 4), (4, 8), (8, 10)])
        self.assertEqual(chunk_bounds(0, 4), [])
        with self.assertRaises(DomainError):
            chunk_bounds(10, 0)

    def test_map_chunks_keeps_order(self):
        def work(start, stop):
            return list(range(start, stop))

        results = map_chunks(work, 100, 7, 4)
        self.assertEqual([value for part in results for value in part], list(range(100)))
        self.assertEqual(map_chunks(work, 100, 7, 1), results)

    def test_tree_reduce(self):
        self.assertEqual(tree_reduce(["a", "b", "c", "d", "e"], lambda x, y: f"({x}{y})"), "(((ab)(cd))e)")
        self.assertEqual(tree_reduce([4], lambda x, y: x + y), 4)
        with self.assertRaises(DomainError):
            tree_reduce([], lambda x, y: x + y)


class TestState(unittest.TestCase):

    def setUp(self):
        self.near = np.array([0.5, 0.5, 1.0])
        self.far = np.array([4.0, 4.0, 2.0])

    def test_initial_clamps_focus(self):
        optics = PerViewOptics.initial(np.array([True, True, False]), self.near, self.far, 0.5, 0.5)
        np.testing.assert_array_equal(optics.aperture, [0.5, 0.5, 0.5])
        np.testing.assert_array_equal(optics.focus, [0.5, 0.5, 1.0])
        self.assertEqual(len(optics), 3)

    def test_clamped(self):
        optics = PerViewOptics.initial(np.ones(3, dtype=bool), self.near, self.far, 0.5, 1.0)
        moved = optics.clamped(np.array([-1.0, 2.0, 0.0]), np.array([0.1, 5.0, 1.5]))
        np.testing.assert_array_equal(moved.aperture, [APERTURE_FLOOR, 2.0, APERTURE_FLOOR])
        np.testing.assert_array_equal(moved.focus, [0.5, 4.0, 1.5])

    def test_validation(self):
        trainable = np.ones(3, dtype=bool)
        with self.assertRaises(DomainError):
            PerViewOptics(np.array([-0.1, 0.0, 0.0]), np.ones(3), trainable, self.near, self.far)
        with self.assertRaises(DomainError):
            PerViewOptics(np.zeros(3), np.array([1.0, 1.0, 3.0]), trainable, self.near, self.far)
        with self.assertRaises(ShapeMismatchError):
            PerViewOptics(np.zeros(3), np.ones(2), trainable, self.near, self.far)

    def test_fresh(self):
        config = _tiny_config()
        optics = PerViewOptics.initial(np.ones(2, dtype=bool), np.full(2, 0.5), np.full(2, 4.0), 0.5, 0.5)
        state = TrainState.fresh(init_params(config.arch, 0), optics)
        self.assertEqual(state.step, 0)
        self.assertEqual(state.field_adam.step, 0)
        self.assertEqual(set(state.optics_adam.m), {"aperture", "focus"})


class TestCheckpoint(unittest.TestCase):

    def setUp(self):
        self.directory = tempfile.TemporaryDirectory()
        self.root = Path(self.directory.name)
        self.config = _tiny_config()
        self.dataset = _tiny_dataset()

    def tearDown(self):
        self.directory.cleanup()

    def test_roundtrip(self):
        trainer = Trainer(self.dataset, self.config)
        for _ in range(3):
            trainer.step()
        path = save_checkpoint(self.root / "ckpt" / CHECKPOINT_NAME, trainer.state, self.config)
        state, config = load_checkpoint(path)
        self.assertEqual(config, self.config)
        self.assertEqual(state.step, 3)
        np.testing.assert_array_equal(state.params.flatten(), trainer.state.params.flatten())
        np.testing.assert_array_equal(state.optics.aperture, trainer.state.optics.aperture)
        np.testing.assert_array_equal(state.optics.focus, trainer.state.optics.focus)
        np.testing.assert_array_equal(state.optics.trainable, trainer.state.optics.trainable)
        self.assertEqual(state.field_adam.step, trainer.state.field_adam.step)
        for name in state.field_adam.m:
            np.testing.assert_array_equal(state.field_adam.m[name], trainer.state.field_adam.m[name])
            np.testing.assert_array_equal(state.field_adam.v[name], trainer.state.field_adam.v[name])
        np.testing.assert_array_equal(state.optics_adam.v["focus"], trainer.state.optics_adam.v["focus"])
        self.assertFalse((self.root / "ckpt" / (CHECKPOINT_NAME + ".partial")).exists())

    def test_missing_file(self):
        with self.assertRaises(DatasetFormatError):
            load_checkpoint(self.root / "nothing.npz")
        garbage = self.root / "garbage.npz"
        garbage.write_bytes(b"not an archive")
        with self.assertRaises(DatasetFormatError):
            load_checkpoint(garbage)

    def test_missing_entry(self):
        path = self.root / "partial.npz"
        np.savez(path, format=np.array("lensfield-checkpoint"), version=np.array(1))
        with self.assertRaises(DatasetFormatError) as context:
            load_checkpoint(path)
        self.assertEqual(context.exception.field, "config")

    def test_inconsistent_arrays(self):
        trainer = Trainer(self.dataset, self.config)
        path = save_checkpoint(self.root / CHECKPOINT_NAME, trainer.state, self.config)
        with np.load(path) as archive:
            arrays = {name: archive[name] for name in archive.files}
        arrays["params"] = arrays["params"][:-1]
        np.savez(path, **arrays)
        with self.assertRaises(DatasetFormatError):
            load_checkpoint(path)


class TestFieldRender(unittest.TestCase):

    def setUp(self):
        self.dataset = _tiny_dataset()
        self.config = _tiny_config()
        self.params = init_params(self.config.arch, 3)
        self.batch = random_ray_batch(self.dataset, 40, 7)

    def test_independent_of_threads_and_chunks(self):
        reference = sample_field(self.params, self.batch.rays, 8, (1, 2), 1, 256)
        for threads, chunk in ((4, 256), (3, 7), (2, 1)):
            other = sample_field(self.params, self.batch.rays, 8, (1, 2), threads, chunk)
            np.testing.assert_allclose(other.colors, reference.colors, rtol=0.0, atol=1e-12)
            np.testing.assert_allclose(other.alphas, reference.alphas, rtol=0.0, atol=1e-12)

    def test_gradients_independent_of_threads(self):
        samples = sample_field(self.params, self.batch.rays, 8)
        rng = np.random.default_rng(0)
        d_colors, d_alphas = rng.normal(size=samples.colors.shape), rng.normal(size=samples.alphas.shape)
        first = field_gradients(self.params, self.batch.rays, samples, d_colors, d_alphas, 1, 16)
        second = field_gradients(self.params, self.batch.rays, samples, d_colors, d_alphas, 4, 16)
        np.testing.assert_array_equal(first.flatten(), second.flatten())
        third = field_gradients(self.params, self.batch.rays, samples, d_colors, d_alphas, 1, 40)
        np.testing.assert_allclose(first.flatten(), third.flatten(), rtol=1e-10, atol=1e-14)
        with self.assertRaises(ShapeMismatchError):
            field_gradients(self.params, self.batch.rays, samples, d_colors[:-1], d_alphas)

    def test_pinhole_gradient_matches_finite_differences(self):
        samples = sample_field(self.params, self.batch.rays, 8)
        weights = np.random.default_rng(1).normal(size=(40, 3))
        d_colors, d_alphas = concentrate_backward(samples, weights, np.zeros(40))
        grads = field_gradients(self.params, self.batch.rays, samples, d_colors, d_alphas)

        def loss(params):
            return float(np.sum(render_pinhole(params, self.batch.rays, 8) * weights))

        step = 1e-6
        for name, index in (("density_bias", (0,)), ("color_bias", (1,)), ("trunk_0_weight", (2, 3))):
            numeric = (loss(_perturbed(self.params, name, index, step)) - loss(_perturbed(self.params, name, index, -step))) / (2.0 * step)
            self.assertAlmostEqual(float(grads[name][index]), numeric, delta=1e-5 * max(1.0, abs(numeric)))

    def test_render_view_without_aperture_is_pinhole(self):
        camera = self.dataset[0].camera
        image = render_view(self.params, camera, 0.0, 2.0, n_samples=8)
        self.assertEqual(image.shape, (16, 16, 3))
        reference = render_view(self.params, camera, n_samples=8, threads=2, chunk_size=50)
        np.testing.assert_allclose(image, reference, rtol=0.0, atol=1e-12)
        blurred = render_view(self.params, camera, 3.0, 2.0, gamma=1.0, r_max=3.0, n_samples=8)
        self.assertEqual(blurred.shape, (16, 16, 3))
        self.assertTrue(np.all(np.isfinite(blurred)))
        with self.assertRaises(DomainError):
            render_view(self.params, camera, -1.0)


class TestLosses(unittest.TestCase):

    def setUp(self):
        self.dataset = _tiny_dataset()
        self.config = _tiny_config()
        self.params = init_params(self.config.arch, 11)
        self.patch = patch_batch(self.dataset, self.config.patch_spec, 4)

    def test_defocus_gradients_match_finite_differences(self):
        aperture, focus = 3.0, 2.0
        result = defocus_loss(self.params, self.patch, aperture, focus, 8, 2.2, 3.0)

        def loss(params=self.params, k=aperture, f=focus):
            return defocus_loss(params, self.patch, k, f, 8, 2.2, 3.0).loss

        step = 1e-6
        numeric = (loss(k=aperture + step) - loss(k=aperture - step)) / (2.0 * step)
        self.assertAlmostEqual(result.aperture, numeric, delta=1e-4 * max(1e-3, abs(numeric)))
        numeric = (loss(f=focus + step) - loss(f=focus - step)) / (2.0 * step)
        self.assertAlmostEqual(result.focus, numeric, delta=1e-4 * max(1e-3, abs(numeric)))
        for name, block in self.params.blocks.items():
            for flat in sorted({0, block.size // 2, block.size - 1}):
                index = np.unravel_index(flat, block.shape)
                with self.subTest(block=name, index=index):
                    numeric = (loss(_perturbed(self.params, name, index, step))
                               - loss(_perturbed(self.params, name, index, -step))) / (2.0 * step)
                    self.assertAlmostEqual(float(result.field[name][index]), numeric, delta=1e-3 * max(1e-4, abs(numeric)))

    def test_zero_aperture_keeps_an_aperture_gradient(self):
        result = defocus_loss(self.params, self.patch, 0.0, 2.0, 8, 2.2, 3.0)
        step = 1e-5
        numeric = (defocus_loss(self.params, self.patch, 2.0 * step, 2.0, 8, 2.2, 3.0).loss
                   - defocus_loss(self.params, self.patch, step, 2.0, 8, 2.2, 3.0).loss) / step
        self.assertNotEqual(result.aperture, 0.0)
        self.assertAlmostEqual(result.aperture, numeric, delta=1e-3 * max(1e-4, abs(numeric)))
        self.assertEqual(result.focus, 0.0)

    def test_zero_aperture_linear_gamma_is_pinhole(self):
        result = defocus_loss(self.params, self.patch, 0.0, 2.0, 8, 1.0, 3.0)
        side, guard = self.patch.grid_size, self.patch.guard
        colors = composite_pinhole(sample_field(self.params, self.patch.rays, 8)).reshape(side, side, 3)
        interior = colors[guard:side - guard, guard:side - guard]
        expected, _ = mse_loss(interior, self.patch.targets)
        self.assertAlmostEqual(result.loss, expected, places=12)

    def test_pinhole_loss(self):
        batch = random_ray_batch(self.dataset, 16, 0)
        result = pinhole_loss(self.params, batch, 8)
        prediction = render_pinhole(self.params, batch.rays, 8)
        self.assertAlmostEqual(result.loss, mse_loss(prediction, batch.targets)[0], places=14)
        self.assertTrue(result.field.all_finite())


class TestTrainer(unittest.TestCase):

    def setUp(self):
        self.dataset = _tiny_dataset()

    def test_pretraining_leaves_optics(self):
        trainer = Trainer(self.dataset, _tiny_config(n_iters=2, n_pretrain=2))
        before = trainer.state.optics
        report = trainer.run()
        np.testing.assert_array_equal(report.optics.aperture, before.aperture)
        np.testing.assert_array_equal(report.optics.focus, before.focus)
        self.assertEqual(report.stage_steps[1], 2)
        self.assertEqual(report.stage_steps[2], 0)
        self.assertEqual([record.stage for record in report.records], [1, 1])

    def test_joint_stage_moves_trainable_optics_only(self):
        trainer = Trainer(self.dataset, _tiny_config(n_pretrain=0, n_iters=3, focus_init=2.0))
        before = trainer.state.optics
        report = trainer.run()
        test_view = self.dataset.test_indices[0]
        self.assertEqual(float(report.optics.aperture[test_view]), float(before.aperture[test_view]))
        self.assertEqual(float(report.optics.focus[test_view]), float(before.focus[test_view]))
        trained = list(self.dataset.train_indices)
        self.assertFalse(np.array_equal(report.optics.focus[trained], before.focus[trained]))
        self.assertTrue(np.all(report.optics.aperture >= 0.0))
        self.assertTrue(np.all((report.optics.focus >= 0.5) & (report.optics.focus <= 4.0)))

    def test_frozen_groups(self):
        trainer = Trainer(self.dataset, _tiny_config(n_pretrain=0, n_iters=2, learn_aperture=False))
        before = trainer.state.optics
        report = trainer.run()
        np.testing.assert_array_equal(report.optics.aperture, before.aperture)

    def test_zero_learning_rate_changes_nothing(self):
        trainer = Trainer(self.dataset, _tiny_config(lr=0.0, lr_optics=0.0))
        before = trainer.state
        trainer.run()
        np.testing.assert_array_equal(trainer.state.params.flatten(), before.params.flatten())
        np.testing.assert_array_equal(trainer.state.optics.aperture, before.optics.aperture)
        np.testing.assert_array_equal(trainer.state.optics.focus, before.optics.focus)
        self.assertEqual(trainer.state.step, 4)

    def test_stage_ranges(self):
        trainer = Trainer(self.dataset, _tiny_config())
        with self.assertRaises(DomainError):
            trainer.stage1_step(2)
        with self.assertRaises(DomainError):
            trainer.stage2_step(1)

    def test_thread_count_does_not_change_results(self):
        single = train(self.dataset, _tiny_config(threads=1, chunk_size=16))
        pooled = Trainer(self.dataset, _tiny_config(threads=3, chunk_size=16))
        report = pooled.run()
        self.assertEqual([r.loss for r in single.records], [r.loss for r in report.records])
        np.testing.assert_array_equal(single.optics.focus, report.optics.focus)

    def test_resume_continues_the_same_trajectory(self):
        config = _tiny_config(n_pretrain=1, jitter=True)
        straight = Trainer(self.dataset, config)
        straight.run()
        with tempfile.TemporaryDirectory() as directory:
            report = train(self.dataset, config.with_overrides(n_iters=2), directory)
            self.assertIsNotNone(report.checkpoint)
            state, _ = load_checkpoint(Path(directory) / CHECKPOINT_NAME)
            self.assertEqual(state.step, 2)
            resumed = Trainer(self.dataset, config, state)
            resumed.run(directory)
            rows = (Path(directory) / LOG_NAME).read_text().splitlines()
        self.assertEqual(rows[0], ",".join(LOG_COLUMNS))
        self.assertEqual(len(rows), 5)
        np.testing.assert_array_equal(resumed.state.params.flatten(), straight.state.params.flatten())
        np.testing.assert_array_equal(resumed.state.optics.focus, straight.state.optics.focus)
        np.testing.assert_array_equal(resumed.state.optics.aperture, straight.state.optics.aperture)

    def test_gamma_follows_dataset(self):
        linear = make_recovery_dataset(recovery_scene(), n_views=3, image_size=16, r_max=3.0, gamma=1.0)
        self.assertEqual(Trainer(linear, _tiny_config()).gamma, 1.0)
        self.assertEqual(Trainer(linear, _tiny_config(gamma=2.2)).gamma, 2.2)
        self.assertEqual(Trainer(self.dataset, _tiny_config()).gamma, 2.2)

    def test_aperture_never_drops_below_floor(self):
        trainer = Trainer(self.dataset, _tiny_config(n_pretrain=0, n_iters=3, aperture_init=0.0))
        np.testing.assert_array_equal(trainer.state.optics.aperture, np.full(3, APERTURE_FLOOR))
        report = trainer.run()
        self.assertTrue(np.all(report.optics.aperture >= APERTURE_FLOOR))

    def test_state_must_match_dataset(self):
        config = _tiny_config()
        optics = PerViewOptics.initial(np.ones(5, dtype=bool), np.full(5, 0.5), np.full(5, 4.0), 0.5, 0.5)
        with self.assertRaises(DomainError):
            Trainer(self.dataset, config, TrainState.fresh(init_params(config.arch, 0), optics))

    def test_divergence(self):
        trainer = Trainer(self.dataset, _tiny_config())
        broken = trainer.state.params.map_blocks(lambda name, block: np.full_like(block, np.nan) if name == "color_bias" else block)
        trainer.state = TrainState(0, broken, trainer.state.optics, trainer.state.field_adam, trainer.state.optics_adam)
        with self.assertRaises(DivergenceError) as context:
            trainer.step()
        self.assertEqual((context.exception.step, context.exception.stage), (0, 1))
        self.assertEqual(trainer.state.step, 0)


def _layered_patch(seed, size=24, guard=4):
    rng = np.random.default_rng(seed)
    depth = np.full((size, size), 3.0)
    depth[:, :size // 2] = 1.0
    return ConcentratedPatch(rng.uniform(0.05, 0.95, (size, size, 3)), depth, guard)


def _fit_optics(patch, target, aperture, focus, steps, lr, learn_aperture=True):
    values = immutabledict({"aperture": np.array([aperture]), "focus": np.array([focus])})
    adam = AdamState.zeros(values)
    for step in range(steps):
        k, f = float(values["aperture"][0]), float(values["focus"][0])
        result = render_scatter(patch, k, f, ApertureShape.circular(), 2.2, 4.0)
        _, d_image = mse_loss(result.image, target)
        grads = scatter_backward(patch, k, f, ApertureShape.circular(), 2.2, 4.0, d_image, result)
        d_aperture = grads.aperture if learn_aperture else 0.0
        values, adam = adam_step(adam, values, immutabledict({"aperture": np.array([d_aperture]), "focus": np.array([grads.focus])}),
                                 decayed_lr(lr, step, steps))
        values = immutabledict({"aperture": np.maximum(values["aperture"], APERTURE_FLOOR),
                                "focus": np.clip(values["focus"], 0.5, 4.0)})
    return float(values["aperture"][0]), float(values["focus"][0])


class TestOpticsRecovery(unittest.TestCase):

    def setUp(self):
        self.patch = _layered_patch(21)

    def _target(self, aperture, focus):
        return scatter_forward(self.patch, aperture, focus, ApertureShape.circular(), 2.2, 4.0)

    def test_focus_moves_toward_the_focused_layer(self):
        _, near_focus = _fit_optics(self.patch, self._target(6.0, 1.0), 6.0, 1.5, 60, 0.02, learn_aperture=False)
        _, far_focus = _fit_optics(self.patch, self._target(6.0, 3.0), 6.0, 1.5, 60, 0.02, learn_aperture=False)
        self.assertLess(near_focus, 1.5)
        self.assertGreater(far_focus, 1.5)

    def test_joint_recovery(self):
        near_aperture, near_focus = _fit_optics(self.patch, self._target(6.0, 1.0), 3.0, 1.5, 300, 0.1)
        far_aperture, far_focus = _fit_optics(self.patch, self._target(6.0, 3.0), 3.0, 1.5, 300, 0.1)
        self.assertLess(near_focus, far_focus)
        self.assertLess(abs(near_focus - 1.0), 0.15)
        self.assertLess(abs(far_focus - 3.0), 0.45)
        self.assertLess(abs(near_aperture - 6.0), 0.3 * 6.0)
        self.assertLess(abs(far_aperture - 6.0), 0.3 * 6.0)

    def test_pinhole_view_recovers_small_aperture(self):
        aperture, _ = _fit_optics(self.patch, self._target(0.0, 1.0), 3.0, 1.5, 300, 0.1)
        self.assertLess(aperture, 0.25 * 6.0)


class TestReducedSchedules(unittest.TestCase):

    def test_constant_color_pinhole_fit(self):
        base = _tiny_dataset()
        color = np.array([0.3, 0.5, 0.7])
        views = tuple(replace(view, image=np.tile(color, view.image.shape[:2] + (1,))) for view in base)
        dataset = SceneDataset(views, "constant", base.gamma)
        report = train(dataset, _tiny_config(n_iters=500, n_pretrain=500, lr=1e-2, decay_steps=None, log_interval=50))
        self.assertEqual(report.records[-1].step, 499)
        self.assertLess(report.records[-1].loss, 1e-4)

    def test_defocus_step_costs_at_most_twice_a_pinhole_step(self):
        dataset = make_recovery_dataset(recovery_scene(), n_views=3, image_size=32, r_max=4.0)
        config = TrainConfig(
            n_iters=8, n_pretrain=4, batch_size=24 * 24, n_samples=32, hidden_layers=4, hidden_width=32, patch_size=16,
            anchor_stride=8, r_max=4.0, threads=1, chunk_size=1024, log_interval=100,
        )
        self.assertEqual(config.patch_spec.grid_size ** 2, config.batch_size)
        report = train(dataset, config)
        self.assertLessEqual(report.seconds_per_iteration(2), 2.0 * report.seconds_per_iteration(1))


def _all_in_focus_psnr(dataset, params, config):
    renders = [render_view(params, dataset[index].camera, n_samples=config.n_samples, threads=config.threads)
               for index in dataset.test_indices]
    truths = [dataset[index].all_in_focus for index in dataset.test_indices]
    return mean_score(evaluate_images(renders, truths))[0]


@unittest.skipUnless(os.environ.get(DESK_SCALE_ENV), f"set {DESK_SCALE_ENV}=1 to run the desk-scale schedule")
class TestDeskScale(unittest.TestCase):

    def test_focus_separation(self):
        dataset = make_recovery_dataset(recovery_scene())
        report = train(dataset, TrainConfig())
        fg = [index for index in dataset.train_indices if dataset[index].optics.focus == 1.0]
        bg = [index for index in dataset.train_indices if dataset[index].optics.focus == 3.0]
        self.assertLess(float(np.max(report.optics.focus[fg])), float(np.min(report.optics.focus[bg])))

    def test_aperture_groups(self):
        dataset = make_recovery_dataset(recovery_scene(), pattern="alternating_aperture")
        report = train(dataset, TrainConfig())
        for index in dataset.train_indices:
            recovered = float(report.optics.aperture[index])
            if dataset[index].optics.aperture > 0.0:
                self.assertLess(abs(recovered - 6.0), 0.3 * 6.0)
            else:
                self.assertLess(recovered, 0.25 * 6.0)

    def test_all_in_focus_beats_pinhole_baseline(self):
        dataset = make_recovery_dataset(recovery_scene())
        config = TrainConfig()
        full = Trainer(dataset, config)
        full.run()
        baseline_config = config.with_overrides(n_pretrain=config.n_iters)
        baseline = Trainer(dataset, baseline_config)
        baseline.run()
        gain = _all_in_focus_psnr(dataset, full.state.params, config) - _all_in_focus_psnr(dataset, baseline.state.params, config)
        self.assertGreaterEqual(gain, 0.5)

    def test_default_schedule_fits_twenty_minutes(self):
        dataset = make_recovery_dataset(recovery_scene())
        config = TrainConfig()
        report = train(dataset, config.with_overrides(n_iters=6, n_pretrain=3))
        projected = (config.n_pretrain * report.seconds_per_iteration(1)
                     + (config.n_iters - config.n_pretrain) * report.seconds_per_iteration(2))
        self.assertLess(projected, 20 * 60, f"projected {projected:.0f} s for the default schedule")


if __name__ == '__main__':
    unittest.main()
