"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s``.  The end-to-end criteria
train two desk-scale models on the shapes dataset (several minutes each on a
laptop-class CPU); everything else is fast.
"""

import math

import pytest
import torch

from far.checkpoint import CheckpointError, read_container
from far.config import TrainConfig, apply_overrides
from far.dataset import class_means, generate_dataset, nearest_class_mean
from far.diffloss import (
    DenoiserMlp,
    NoiseSchedule,
    allocate_steps,
    diffusion_loss,
    level_weight,
    sample_tokens,
)
from far.generator import SampleConfig, eval_diversity, eval_spectrum_match, generate_batch, plan_levels
from far.model import FarModel, model_backward
from far.optim import AdamW
from far.schedules import MaskSchedule, mask_lower_bound
from far.spectral import FrequencySchedule, fourier_lowpass, icr_continuous, icr_discrete, spatial_downup
from far.tokenizer import fit_stats
from far.trainer import build_state, dataset_spec, load_checkpoint, resume, save_checkpoint, train, train_step

from helpers import finite_difference_grads, max_relative_error

# Shapes configuration shared by the end-to-end criteria.  Inference masks a
# third of the tokens after the first step, matching the masked inputs the
# model saw in training.
ACCEPT_OVERRIDES = {
    "levels": "10",
    "filter_kind": "fourier-mask",
    "model_width": "96",
    "model_depth": "3",
    "model_heads": "4",
    "mlp_width": "96",
    "mlp_depth": "3",
    "time_embed_dim": "64",
    "batch_size": "64",
    "learning_rate": "4e-4",
    "ema_rate": "0.995",
    "warmup_steps": "100",
    "epochs": "70",
    "inference_mask_ratio": "0.35",
    "n_samples": "64",
}

SAMPLES_PER_CLASS = 64


def report(name: str, ok: bool, detail: str) -> None:
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


def accept_config(**extra) -> TrainConfig:
    overrides = dict(ACCEPT_OVERRIDES)
    overrides.update({k: str(v) for k, v in extra.items()})
    return apply_overrides(TrainConfig(), overrides)


@pytest.fixture(scope="session")
def shapes_data():
    cfg = accept_config()
    images, labels = generate_dataset(dataset_spec(cfg))
    return images, labels, class_means(images, labels, cfg.num_classes)


@pytest.fixture(scope="session")
def trained_state():
    torch.set_num_threads(2)
    try:
        return train(accept_config())
    finally:
        torch.set_num_threads(1)


@pytest.fixture(scope="session")
def nomask_state():
    torch.set_num_threads(2)
    try:
        return train(accept_config(use_mask="false"))
    finally:
        torch.set_num_threads(1)


def sample_per_class(state, n_per_class: int, ar_steps: int, seed: int):
    cfg = state.cfg
    model, denoiser = state.ema_modules()
    sample_cfg = SampleConfig(
        level_path=plan_levels(ar_steps, cfg.levels),
        temperature=cfg.temperature,
        inference_mask_ratio=cfg.inference_mask_ratio,
        diffusion_min_steps=cfg.diffusion_min_steps,
        diffusion_max_steps=cfg.diffusion_max_steps,
    )
    generator = torch.Generator().manual_seed(seed)
    images, labels = [], []
    for class_id in range(cfg.num_classes):
        imgs, _ = generate_batch(
            model, denoiser, state.freq_sched, state.noise_sched, state.stats, sample_cfg,
            torch.full((n_per_class,), class_id, dtype=torch.long), generator,
        )
        images.append(imgs)
        labels.append(torch.full((n_per_class,), class_id, dtype=torch.long))
    return torch.cat(images), torch.cat(labels)


class TestCriterion1FormulaExactness:
    def test_formula_exactness(self):
        worst = 0.0
        for levels in range(2, 65):
            for i in range(1, levels + 1):
                expected = 1.0 + math.sin(math.pi / 2.0 * i / levels)
                worst = max(worst, abs(level_weight(i, levels) - expected))
        ok = worst < 1e-12

        steps = [allocate_steps(i, 10) for i in range(1, 11)]
        ok &= steps[0] == 40 and steps[-1] == 100
        ok &= sum(steps) / len(steps) == 70

        sched = MaskSchedule()
        ok &= abs(mask_lower_bound(1, 10, sched) - 0.7) < 1e-12
        ok &= abs(mask_lower_bound(10, 10, sched)) < 1e-12

        ok &= round(100 * icr_discrete(16384, 16), 2) == 0.23
        ok &= round(100 * icr_continuous(16, 16), 2) == 8.33
        report(
            "criterion 1 (formula exactness)",
            ok,
            f"max |w_i| error {worst:.2e}; steps 40/100 mean 70; mask bounds 0.7/0.0; ICR 0.23%/8.33%",
        )


class TestCriterion2FilterSuite:
    def test_filter_suite(self):
        g = torch.Generator().manual_seed(2024)
        fourier = FrequencySchedule.linear(4, "fourier-mask")
        spatial = FrequencySchedule.linear(8, "spatial-downup", side=8)
        worst = 0.0
        for _ in range(100):
            x = torch.randn(8, 8, 4, generator=g, dtype=torch.float64)
            y = torch.randn(8, 8, 4, generator=g, dtype=torch.float64)
            worst = max(worst, float((fourier_lowpass(x, 4, fourier) - x).abs().max()))
            worst = max(worst, float((spatial_downup(x, 8, spatial) - x).abs().max()))
            for level in range(1, 5):
                once = fourier_lowpass(x, level, fourier)
                worst = max(worst, float((fourier_lowpass(once, level, fourier) - once).abs().max()))
                if level < 4:
                    nested = fourier_lowpass(fourier_lowpass(x, level + 1, fourier), level, fourier)
                    worst = max(worst, float((nested - fourier_lowpass(x, level, fourier)).abs().max()))
            for sched, apply in ((fourier, fourier_lowpass), (spatial, spatial_downup)):
                for level in range(1, sched.levels + 1):
                    out = apply(x, level, sched)
                    worst = max(worst, float((out.mean(dim=(0, 1)) - x.mean(dim=(0, 1))).abs().max()))
                    mix = apply(1.3 * x - 0.7 * y, level, sched)
                    split = 1.3 * apply(x, level, sched) - 0.7 * apply(y, level, sched)
                    worst = max(worst, float((mix - split).abs().max()))
        report("criterion 2 (filter suite)", worst < 1e-9, f"worst deviation {worst:.2e} over 100 grids")


class TestCriterion3GradientFidelity:
    def test_gradient_fidelity(self):
        worst = 0.0
        for seed in (1, 2, 3):
            g = torch.Generator().manual_seed(seed)
            depth = 1 if seed % 2 else 2
            width = 8 if seed % 2 else 16
            model = FarModel(
                grid_h=2, grid_w=2, token_dim=3, levels=3, num_classes=2,
                width=width, depth=depth, heads=2,
            ).double()
            for p in model.parameters():
                p.data.normal_(0, 0.3, generator=g)
            tokens = torch.randn(1, 2, 2, 3, generator=g, dtype=torch.float64)
            mask = torch.rand(1, 2, 2, generator=g) < 0.4
            upstream = torch.randn(1, 2, 2, width, generator=g, dtype=torch.float64)
            analytic, _ = model_backward(model, tokens, mask, 1, 2, upstream)

            def model_loss():
                with torch.no_grad():
                    return float((model(tokens, mask, 1, 2) * upstream).sum())

            numeric = finite_difference_grads(model_loss, dict(model.named_parameters()))
            worst = max(worst, max_relative_error(analytic, numeric))

            mlp = DenoiserMlp(2, 3, width=width, depth=depth, time_embed_dim=8).double()
            for p in mlp.parameters():
                p.data.normal_(0, 0.3, generator=g)
            sched = NoiseSchedule.cosine(50)
            z = torch.randn(5, 3, generator=g, dtype=torch.float64)
            x0 = torch.randn(5, 2, generator=g, dtype=torch.float64)

            def mlp_loss():
                loss, _ = diffusion_loss(mlp, z, x0, sched, torch.Generator().manual_seed(seed + 100))
                return float(loss.detach())

            loss, _ = diffusion_loss(mlp, z, x0, sched, torch.Generator().manual_seed(seed + 100))
            mlp.zero_grad()
            loss.backward()
            analytic_mlp = {k: p.grad.clone() for k, p in mlp.named_parameters()}
            numeric_mlp = finite_difference_grads(mlp_loss, dict(mlp.named_parameters()))
            worst = max(worst, max_relative_error(analytic_mlp, numeric_mlp))
        report("criterion 3 (gradient fidelity)", worst < 1e-4, f"max relative error {worst:.2e} over 3 seeds")


class TestCriterion4SamplerOracle:
    def test_two_gaussian_mixture_recovery(self):
        from sklearn.mixture import GaussianMixture

        torch.set_num_threads(2)
        try:
            true_weights = (0.3, 0.7)
            true_means = (-1.0, 1.0)
            true_std = 0.25
            g = torch.Generator().manual_seed(0)
            sched = NoiseSchedule.cosine(1000)
            mlp = DenoiserMlp(1, 4, width=96, depth=2, time_embed_dim=32)
            mlp.init_weights(g)
            params = dict(mlp.named_parameters())
            opt = AdamW(params, lr=2e-3, betas=(0.9, 0.95), weight_decay=0.0)
            z = torch.zeros(512, 4)
            for step in range(6000):
                comp = torch.rand(512, generator=g) < true_weights[1]
                mu = torch.where(comp, torch.tensor(true_means[1]), torch.tensor(true_means[0]))
                x0 = (mu + true_std * torch.randn(512, generator=g)).unsqueeze(1)
                loss, _ = diffusion_loss(mlp, z, x0, sched, g)
                for p in params.values():
                    p.grad = None
                loss.backward()
                opt.step(lr=2e-3 * min(1.0, (step + 1) / 100))

            with torch.no_grad():
                samples = sample_tokens(
                    mlp, torch.zeros(100_000, 4), 150, sched, 1.0, torch.Generator().manual_seed(1)
                )
            em = GaussianMixture(2, n_init=3, random_state=0)
            em.fit(samples.numpy())
            order = em.means_.ravel().argsort()
            fit_means = em.means_.ravel()[order]
            fit_weights = em.weights_.ravel()[order]
            weight_err = max(abs(fit_weights[0] - true_weights[0]), abs(fit_weights[1] - true_weights[1]))
            mean_err = max(abs(fit_means[0] - true_means[0]), abs(fit_means[1] - true_means[1]))
            report(
                "criterion 4 (sampler statistical oracle)",
                weight_err <= 0.03 and mean_err <= 0.05,
                f"EM on 1e5 samples: weights {fit_weights.round(4)} (err {weight_err:.4f} <= 0.03), "
                f"means {fit_means.round(4)} (err {mean_err:.4f} <= 0.05)",
            )
        finally:
            torch.set_num_threads(1)


class TestCriterion5EndToEnd:
    def test_end_to_end_generation(self, trained_state, shapes_data):
        torch.set_num_threads(2)
        try:
            images, labels, means = shapes_data
            cfg = trained_state.cfg
            generated, gen_labels = sample_per_class(trained_state, SAMPLES_PER_CLASS, cfg.levels, seed=500)
            trained_err = eval_spectrum_match(generated, images)

            untrained = build_state(cfg, fit_stats(images, cfg.patch_size))
            baseline, _ = sample_per_class(untrained, SAMPLES_PER_CLASS, cfg.levels, seed=500)
            untrained_err = eval_spectrum_match(baseline, images)

            accuracy = float((nearest_class_mean(generated, means) == gen_labels).float().mean())
            ok = trained_err <= 0.5 * untrained_err and accuracy >= 0.70
            report(
                "criterion 5 (end-to-end toy generation)",
                ok,
                f"spectrum error {trained_err:.3f} vs untrained {untrained_err:.3f} "
                f"(ratio {trained_err / untrained_err:.3f} <= 0.5); "
                f"nearest-class-mean accuracy {accuracy:.3f} >= 0.70",
            )
        finally:
            torch.set_num_threads(1)


class TestCriterion6QualityVsSteps:
    def test_spectrum_error_non_increasing_in_ar_steps(self, trained_state, shapes_data):
        torch.set_num_threads(2)
        try:
            images, _, _ = shapes_data
            errors = {}
            for ar_steps in (2, 5, 10):
                generated, _ = sample_per_class(trained_state, SAMPLES_PER_CLASS, ar_steps, seed=60)
                errors[ar_steps] = eval_spectrum_match(generated, images)
            ok = errors[2] >= errors[5] >= errors[10]
            report(
                "criterion 6 (quality-vs-steps trend)",
                ok,
                f"spectrum error K=2: {errors[2]:.3f} >= K=5: {errors[5]:.3f} >= K=10: {errors[10]:.3f}",
            )
        finally:
            torch.set_num_threads(1)


class TestCriterion7MaskDiversity:
    def test_mask_mechanism_raises_diversity(self, trained_state, nomask_state):
        torch.set_num_threads(2)
        try:
            masked_imgs, _ = sample_per_class(trained_state, SAMPLES_PER_CLASS, trained_state.cfg.levels, seed=70)
            plain_imgs, _ = sample_per_class(nomask_state, SAMPLES_PER_CLASS, nomask_state.cfg.levels, seed=70)
            masked_div = eval_diversity(masked_imgs)
            plain_div = eval_diversity(plain_imgs)
            report(
                "criterion 7 (mask-diversity ablation)",
                masked_div > plain_div,
                f"diversity with mask {masked_div:.4f} > without mask {plain_div:.4f}",
            )
        finally:
            torch.set_num_threads(1)


class TestCriterion8Determinism:
    def test_determinism_and_persistence(self, tmp_path):
        torch.set_num_threads(1)
        cfg = accept_config(epochs=4, samples_per_class=100)  # 7 steps/epoch at batch 64

        images, labels = generate_dataset(dataset_spec(cfg))
        stats = fit_stats(images, cfg.patch_size)

        def run_steps(state, n):
            for _ in range(n):
                idx = torch.randint(images.shape[0], (cfg.batch_size,), generator=state.generator)
                train_step(state, images[idx], labels[idx])
            return state

        a = run_steps(build_state(cfg, stats), 100)
        b = run_steps(build_state(cfg, stats), 100)
        identical = all(torch.equal(x, y) for x, y in zip(a.params.values(), b.params.values()))

        continuous = run_steps(build_state(cfg, stats), 60)
        half = run_steps(build_state(cfg, stats), 50)
        path = tmp_path / "resume.far"
        save_checkpoint(path, half)
        resumed = resume(load_checkpoint(path), 10)
        resume_identical = all(
            torch.equal(x, y) for x, y in zip(continuous.params.values(), resumed.params.values())
        ) and all(torch.equal(continuous.ema.shadow[k], resumed.ema.shadow[k]) for k in continuous.ema.shadow)

        blob = bytearray(path.read_bytes())
        blob[len(blob) // 3] ^= 0x01
        corrupt = tmp_path / "corrupt.far"
        corrupt.write_bytes(bytes(blob))
        try:
            read_container(corrupt)
            crc_detected = False
        except CheckpointError:
            crc_detected = True

        report(
            "criterion 8 (determinism & persistence)",
            identical and resume_identical and crc_detected,
            f"100-step same-seed bit-identity: {identical}; 10-step resume bit-identity: {resume_identical}; "
            f"single-byte corruption detected: {crc_detected}",
        )
