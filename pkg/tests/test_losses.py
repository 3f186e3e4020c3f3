import math

import numpy as np
import pytest
import torch
from torch import nn

from segedit import geometry
from segedit.geometry import EditBox, ExpansionSchedule
from segedit.losses import (
    EPS,
    AdversarialPair,
    LossWeights,
    a_mex_loss,
    adversarial_loss,
    basic_loss,
    feature_matching_loss,
    fuse_maps,
    mex_loss,
    mexgan_loss,
    perceptual_loss,
)
from segedit.networks import PatchDiscriminator, PerceptualEncoder, pad_to_min_side

COND_CH = 6
H = W = 32


def rand(shape, seed):
    g = torch.Generator().manual_seed(seed)
    return torch.rand(shape, generator=g)


def scene(seed=100, batch=1):
    fused = rand((batch, 3, H, W), seed) * 2 - 1
    real = rand((batch, 3, H, W), seed + 1) * 2 - 1
    cond = rand((batch, COND_CH, H, W), seed + 2)
    return fused, real, cond


class TestAdversarialLoss:
    def test_coin_flip_discriminator(self):
        half = torch.full((1, 1, 4, 4), 0.5)
        pair = adversarial_loss(half, half)
        assert float(pair.disc) == pytest.approx(2 * math.log(2), abs=1e-6)
        assert float(pair.gen) == pytest.approx(math.log(2), abs=1e-6)

    def test_perfect_discriminator_limit(self):
        real = torch.full((1, 1, 2, 2), 1.0)
        fake = torch.full((1, 1, 2, 2), 0.0)
        pair = adversarial_loss(real, fake)
        assert float(pair.disc) == pytest.approx(0.0, abs=1e-5)

    def test_generator_term_monotone_in_fake_score(self):
        real = torch.full((1, 4), 0.5)
        values = [0.1, 0.3, 0.6, 0.9]
        gens = [float(adversarial_loss(real, torch.full((1, 4), v)).gen) for v in values]
        assert gens == sorted(gens, reverse=True)

    def test_empty_field_raises(self):
        with pytest.raises(ValueError, match="empty"):
            adversarial_loss(torch.zeros(0), torch.zeros(4))

    def test_clamp_keeps_losses_finite(self):
        real = torch.tensor([0.0, 1.0])
        fake = torch.tensor([1.0, 0.0])
        pair = adversarial_loss(real, fake)
        assert torch.isfinite(pair.gen) and torch.isfinite(pair.disc)
        assert float(pair.gen) <= -math.log(EPS) + 1e-3

    def test_literal_complement_form(self):
        half = torch.full((3,), 0.5)
        pair = adversarial_loss(half, half, literal_complement=True)
        # -ln(.5) - (1 - ln(.5)) = -1
        assert float(pair.disc) == pytest.approx(-1.0, abs=1e-6)


class TestFeatureMatching:
    def test_identical_is_zero(self):
        feats = [torch.rand(1, 4, 5, 5), torch.rand(1, 8, 3, 3)]
        assert float(feature_matching_loss(feats, [f.clone() for f in feats])) == 0.0

    def test_unit_shift_single_layer(self):
        real = [rand((1, 2, 4, 4), 3)]
        fake = [real[0] + 1.0]
        assert float(feature_matching_loss(real, fake)) == pytest.approx(1.0, abs=1e-6)

    def test_symmetric(self):
        a = [rand((1, 3, 4, 4), 4)]
        b = [rand((1, 3, 4, 4), 5)]
        assert float(feature_matching_loss(a, b)) == float(feature_matching_loss(b, a))

    def test_layer_count_mismatch(self):
        with pytest.raises(ValueError, match="layer count"):
            feature_matching_loss([torch.rand(1, 2, 2, 2)], [])

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape"):
            feature_matching_loss([torch.rand(1, 2, 2, 2)], [torch.rand(1, 2, 3, 3)])


class TestPerceptual:
    def test_identical_is_zero(self):
        enc = PerceptualEncoder()
        img = rand((1, 3, 16, 16), 6)
        assert float(perceptual_loss(img, img.clone(), enc)) == 0.0

    def test_non_negative(self):
        enc = PerceptualEncoder()
        a = rand((1, 3, 16, 16), 7)
        b = rand((1, 3, 16, 16), 8)
        assert float(perceptual_loss(a, b, enc)) >= 0.0

    def test_tap_weights_applied(self):
        stages = [nn.Identity() for _ in range(5)]
        enc = PerceptualEncoder.from_stages(stages)
        a = torch.zeros(1, 3, 8, 8)
        b = torch.ones(1, 3, 8, 8)
        total_weight = sum(enc.weights)  # 1/32+1/16+1/8+1/4+1
        assert float(perceptual_loss(a, b, enc)) == pytest.approx(total_weight, abs=1e-6)


def central_fd_gradient(fn, x: torch.Tensor, h: float = 1e-5) -> torch.Tensor:
    """Central finite differences of a scalar fn over every coordinate of x."""
    flat = x.detach().clone().reshape(-1)
    grad = torch.zeros_like(flat)
    with torch.no_grad():
        for i in range(flat.numel()):
            probe = flat.clone()
            probe[i] += h
            up = fn(probe.reshape(x.shape))
            probe[i] -= 2 * h
            down = fn(probe.reshape(x.shape))
            grad[i] = (up - down) / (2 * h)
    return grad.reshape(x.shape)


def norm_rel_error(analytic: torch.Tensor, fd: torch.Tensor) -> float:
    num = (analytic - fd).norm().item()
    den = max(analytic.norm().item(), fd.norm().item(), 1e-12)
    return num / den


class TestGradientOracles:
    """Central finite differences at 64-bit precision on 8x8 generated
    images, h=1e-5, relative error below 1e-3."""

    def test_perceptual_gradient(self):
        enc = PerceptualEncoder().double()
        target = (rand((1, 3, 8, 8), 9) * 2 - 1).double()
        x = (rand((1, 3, 8, 8), 10) * 2 - 1).double().requires_grad_(True)
        loss = perceptual_loss(x, target, enc)
        loss.backward()
        fd = central_fd_gradient(
            lambda img: float(perceptual_loss(img, target, enc)), x
        )
        assert norm_rel_error(x.grad, fd) < 1e-3

    def test_feature_matching_gradient(self):
        disc = PatchDiscriminator(condition_channels=COND_CH, seed=21).double()
        cond = pad_to_min_side(rand((1, COND_CH, 8, 8), 11).double())
        real = pad_to_min_side((rand((1, 3, 8, 8), 12) * 2 - 1).double())
        _, real_feats = disc(real, cond)
        real_feats = [f.detach() for f in real_feats]

        def fn(img):
            _, fake_feats = disc(pad_to_min_side(img), cond)
            return feature_matching_loss(real_feats, fake_feats)

        x = (rand((1, 3, 8, 8), 13) * 2 - 1).double().requires_grad_(True)
        fn(x).backward()
        fd = central_fd_gradient(lambda img: float(fn(img)), x)
        assert norm_rel_error(x.grad, fd) < 1e-3

    def test_adversarial_generator_gradient(self):
        disc = PatchDiscriminator(condition_channels=COND_CH, seed=22).double()
        cond = pad_to_min_side(rand((1, COND_CH, 8, 8), 14).double())
        real = pad_to_min_side((rand((1, 3, 8, 8), 15) * 2 - 1).double())
        real_scores, _ = disc(real, cond)
        real_scores = real_scores.detach()

        def fn(img):
            fake_scores, _ = disc(pad_to_min_side(img), cond)
            return adversarial_loss(real_scores, fake_scores).gen

        x = (rand((1, 3, 8, 8), 16) * 2 - 1).double().requires_grad_(True)
        fn(x).backward()
        fd = central_fd_gradient(lambda img: float(fn(img)), x)
        assert norm_rel_error(x.grad, fd) < 1e-3


class TestFusion:
    def test_matches_ground_truth_partition(self):
        rng = np.random.default_rng(17)
        initial = rng.standard_normal((H, W, 3)).astype(np.float32)
        context = rng.standard_normal((H, W, 3)).astype(np.float32)
        mask = geometry.make_mask(EditBox((4, 6, 20, 25)), H, W)

        expected = geometry.fuse(initial, context, mask)
        got = fuse_maps(
            torch.from_numpy(initial).permute(2, 0, 1)[None],
            torch.from_numpy(context).permute(2, 0, 1)[None],
            torch.from_numpy(mask.astype(np.float32))[None, None],
        )
        np.testing.assert_array_equal(got[0].permute(1, 2, 0).numpy(), expected)


def make_discs(n, seed0=30):
    return [PatchDiscriminator(condition_channels=COND_CH, seed=seed0 + i) for i in range(n)]


def hand_level_pair(disc, fused, real, cond, corners):
    """Per-level adversarial pair computed through the numpy geometry route."""
    r1, c1, r2, c2 = corners
    h, w = fused.shape[2], fused.shape[3]
    mask = np.zeros((h, w), dtype=np.uint8)
    mask[r1 : r2 + 1, c1 : c2 + 1] = 1

    def crop(tensor):
        arr = tensor[0].permute(1, 2, 0).numpy()
        region = geometry.crop_nonzero(arr, mask)
        t = torch.from_numpy(region.data.copy()).permute(2, 0, 1)[None]
        return pad_to_min_side(t)

    with torch.no_grad():
        real_scores, _ = disc(crop(real), crop(cond))
        fake_scores, _ = disc(crop(fused), crop(cond))
    return adversarial_loss(real_scores, fake_scores)


class TestMexLoss:
    def test_q0_equals_local_adversarial_on_raw_crop(self):
        fused, real, cond = scene(101)
        box = EditBox((8, 9, 21, 24))
        sched = ExpansionSchedule(q=0, alpha=5, beta=5, cropped=True)
        discs = make_discs(1)
        with torch.no_grad():
            pair = mex_loss(fused, real, cond, [box], sched, discs)
        hand = hand_level_pair(discs[0], fused, real, cond, box.corners)
        assert float(pair.gen) == pytest.approx(float(hand.gen), abs=1e-6)
        assert float(pair.disc) == pytest.approx(float(hand.disc), abs=1e-6)

    def test_q2_equals_hand_summed_levels(self):
        fused, real, cond = scene(102)
        box = EditBox((10, 10, 20, 20))
        sched = ExpansionSchedule(q=2, alpha=5, beta=5, cropped=True)
        discs = make_discs(3)
        with torch.no_grad():
            pair = mex_loss(fused, real, cond, [box], sched, discs)
        gen_sum = disc_sum = 0.0
        for j in range(3):
            corners = geometry.expand_box(box, j, sched, H, W)
            hand = hand_level_pair(discs[j], fused, real, cond, corners)
            gen_sum += float(hand.gen)
            disc_sum += float(hand.disc)
        assert float(pair.gen) == pytest.approx(gen_sum, rel=1e-6)
        assert float(pair.disc) == pytest.approx(disc_sum, rel=1e-6)

    def test_level_additivity(self):
        fused, real, cond = scene(103)
        box = EditBox((12, 8, 22, 19))
        discs = make_discs(3)
        sched_q2 = ExpansionSchedule(q=2, alpha=4, beta=4, cropped=True)
        sched_q1 = ExpansionSchedule(q=1, alpha=4, beta=4, cropped=True)
        with torch.no_grad():
            full = mex_loss(fused, real, cond, [box], sched_q2, discs)
            partial = mex_loss(fused, real, cond, [box], sched_q1, discs[:2])
        corners = geometry.expand_box(box, 2, sched_q2, H, W)
        isolated = hand_level_pair(discs[2], fused, real, cond, corners)
        assert float(full.gen) - float(partial.gen) == pytest.approx(
            float(isolated.gen), rel=1e-5, abs=1e-6
        )
        assert float(full.disc) - float(partial.disc) == pytest.approx(
            float(isolated.disc), rel=1e-5, abs=1e-6
        )

    def test_identical_inputs_give_equal_real_fake_scores(self):
        fused, _, cond = scene(104)
        box = EditBox((8, 8, 24, 24))
        sched = ExpansionSchedule(q=1, alpha=3, beta=3, cropped=True)
        discs = make_discs(2)
        with torch.no_grad():
            pair = mex_loss(fused, fused.clone(), cond, [box], sched, discs)
        # with identical real/fake crops, disc - gen is exactly the
        # -mean log(1 - s) part evaluated at the same scores
        complement = 0.0
        for j in range(2):
            corners = geometry.expand_box(box, j, sched, H, W)
            hand = hand_level_pair(discs[j], fused, fused, cond, corners)
            complement += float(hand.disc) - float(hand.gen)
        assert float(pair.disc) - float(pair.gen) == pytest.approx(complement, rel=1e-6)

    def test_requires_cropped_schedule(self):
        fused, real, cond = scene(105)
        sched = ExpansionSchedule(q=0, cropped=False)
        with pytest.raises(ValueError, match="cropped"):
            mex_loss(fused, real, cond, [EditBox((1, 1, 5, 5))], sched, make_discs(1))

    def test_discriminator_count_mismatch(self):
        fused, real, cond = scene(106)
        sched = ExpansionSchedule(q=2, cropped=True)
        with pytest.raises(ValueError, match="discriminators"):
            mex_loss(fused, real, cond, [EditBox((1, 1, 5, 5))], sched, make_discs(2))

    def test_batch_is_averaged(self):
        fused, real, cond = scene(107, batch=2)
        boxes = [EditBox((4, 4, 14, 14)), EditBox((10, 12, 25, 27))]
        sched = ExpansionSchedule(q=1, alpha=5, beta=5, cropped=True)
        discs = make_discs(2)
        with torch.no_grad():
            pair = mex_loss(fused, real, cond, boxes, sched, discs)
            one = mex_loss(fused[:1], real[:1], cond[:1], boxes[:1], sched, discs)
            two = mex_loss(fused[1:], real[1:], cond[1:], boxes[1:], sched, discs)
        assert float(pair.gen) == pytest.approx(
            (float(one.gen) + float(two.gen)) / 2, rel=1e-6
        )

    def test_perturbation_outside_outermost_mask_changes_nothing(self):
        fused, real, cond = scene(108)
        box = EditBox((10, 10, 18, 18))
        sched = ExpansionSchedule(q=2, alpha=2, beta=2, cropped=True)
        discs = make_discs(3)
        with torch.no_grad():
            base = mex_loss(fused, real, cond, [box], sched, discs)
        outer = geometry.expand_box(box, 2, sched, H, W)
        outside = torch.from_numpy(
            1.0 - geometry.make_mask(EditBox(outer), H, W).astype(np.float32)
        )[None, None]
        assert outside.sum() > 0
        perturbed = fused + outside * rand(fused.shape, 109)
        with torch.no_grad():
            after = mex_loss(perturbed, real, cond, [box], sched, discs)
        assert float(after.gen) == float(base.gen)
        assert float(after.disc) == float(base.disc)


class TestAMexLoss:
    def test_q0_is_masked_full_canvas_adversarial(self):
        fused, real, cond = scene(110)
        box = EditBox((6, 7, 20, 23))
        sched = ExpansionSchedule(q=0, cropped=False)
        disc = make_discs(1)[0]
        with torch.no_grad():
            pair = a_mex_loss(fused, real, cond, [box], sched, disc)
        mask = torch.from_numpy(geometry.make_mask(box, H, W).astype(np.float32))[None, None]
        with torch.no_grad():
            real_scores, _ = disc(real * mask, cond * mask)
            fake_scores, _ = disc(fused * mask, cond * mask)
        hand = adversarial_loss(real_scores, fake_scores)
        assert float(pair.gen) == pytest.approx(float(hand.gen), abs=1e-6)
        assert float(pair.disc) == pytest.approx(float(hand.disc), abs=1e-6)

    def test_q3_equals_hand_summed_shared_levels(self):
        fused, real, cond = scene(111)
        box = EditBox((12, 12, 19, 19))
        sched = ExpansionSchedule(q=3, alpha=3, beta=3, cropped=False)
        disc = make_discs(1)[0]
        with torch.no_grad():
            pair = a_mex_loss(fused, real, cond, [box], sched, disc)
        gen_sum = disc_sum = 0.0
        for j in range(4):
            corners = geometry.expand_box(box, j, sched, H, W)
            mask = torch.from_numpy(
                geometry.make_mask(EditBox(corners), H, W).astype(np.float32)
            )[None, None]
            with torch.no_grad():
                real_scores, _ = disc(real * mask, cond * mask)
                fake_scores, _ = disc(fused * mask, cond * mask)
            hand = adversarial_loss(real_scores, fake_scores)
            gen_sum += float(hand.gen)
            disc_sum += float(hand.disc)
        assert float(pair.gen) == pytest.approx(gen_sum, rel=1e-6)
        assert float(pair.disc) == pytest.approx(disc_sum, rel=1e-6)

    def test_requires_uncropped_schedule(self):
        fused, real, cond = scene(112)
        sched = ExpansionSchedule(q=0, cropped=True)
        with pytest.raises(ValueError, match="uncropped"):
            a_mex_loss(fused, real, cond, [EditBox((1, 1, 5, 5))], sched, make_discs(1)[0])

    def test_perturbation_outside_outermost_mask_changes_nothing(self):
        fused, real, cond = scene(113)
        box = EditBox((10, 11, 17, 16))
        sched = ExpansionSchedule(q=2, alpha=3, beta=3, cropped=False)
        disc = make_discs(1)[0]
        with torch.no_grad():
            base = a_mex_loss(fused, real, cond, [box], sched, disc)
        outer = geometry.expand_box(box, 2, sched, H, W)
        outside = torch.from_numpy(
            1.0 - geometry.make_mask(EditBox(outer), H, W).astype(np.float32)
        )[None, None]
        assert outside.sum() > 0
        perturbed = fused + outside * rand(fused.shape, 114)
        with torch.no_grad():
            after = a_mex_loss(perturbed, real, cond, [box], sched, disc)
        assert float(after.gen) == float(base.gen)
        assert float(after.disc) == float(base.disc)


class TestLossWeights:
    def test_rejects_negative(self):
        with pytest.raises(ValueError, match="non-negative"):
            LossWeights(lambda2=-0.1)

    def test_defaults_are_unit(self):
        w = LossWeights()
        assert (w.lambda1, w.lambda2, w.lambda3, w.lambda4) == (1, 1, 1, 1)


class TestCombined:
    def setup_method(self):
        self.enc = PerceptualEncoder()
        self.global_disc = PatchDiscriminator(condition_channels=COND_CH, seed=40)
        self.fused, self.real, self.cond = scene(115)
        self.initial = rand((1, 3, H, W), 116) * 2 - 1
        self.box = EditBox((9, 9, 22, 22))

    def combined(self, weights, discs):
        return mexgan_loss(
            self.initial, self.fused, self.real, self.cond, [self.box],
            self.global_disc, self.enc, discs, weights,
        )

    def test_lambda4_zero_equals_basic_exactly(self):
        sched = ExpansionSchedule(q=2, cropped=True)
        weights = LossWeights(lambda4=0.0, schedule=sched)
        with torch.no_grad():
            combined = self.combined(weights, make_discs(3))
            base = basic_loss(
                self.initial, self.real, self.cond, self.global_disc, self.enc, weights
            )
        assert float(combined.gen) == float(base.gen)
        assert float(combined.disc) == float(base.disc)
        assert combined.disc_expansion is None

    def test_lambda4_one_adds_expansion_term(self):
        sched = ExpansionSchedule(q=0, alpha=5, beta=5, cropped=True)
        weights = LossWeights(schedule=sched)
        discs = make_discs(1)
        with torch.no_grad():
            combined = self.combined(weights, discs)
            base = basic_loss(
                self.initial, self.real, self.cond, self.global_disc, self.enc, weights
            )
            expansion = mex_loss(
                self.fused, self.real, self.cond, [self.box], sched, discs
            )
        assert float(combined.gen) == pytest.approx(
            float(base.gen) + float(expansion.gen), rel=1e-6
        )
        assert float(combined.disc) == pytest.approx(
            float(base.disc) + float(expansion.disc), rel=1e-6
        )

    def test_all_lambda_zero_gives_zero_generator_loss(self):
        sched = ExpansionSchedule(q=0, cropped=True)
        weights = LossWeights(0.0, 0.0, 0.0, 0.0, schedule=sched)
        with torch.no_grad():
            combined = self.combined(weights, None)
        assert float(combined.gen) == 0.0

    def test_doubling_weights_doubles_generator_loss(self):
        sched = ExpansionSchedule(q=0, alpha=5, beta=5, cropped=True)
        one = LossWeights(schedule=sched)
        two = LossWeights(2.0, 2.0, 2.0, 2.0, schedule=sched)
        discs = make_discs(1)
        with torch.no_grad():
            a = self.combined(one, discs)
            b = self.combined(two, discs)
        assert float(b.gen) == pytest.approx(2 * float(a.gen), rel=1e-5)

    def test_uncropped_requires_single_discriminator(self):
        sched = ExpansionSchedule(q=2, cropped=False)
        weights = LossWeights(schedule=sched)
        with pytest.raises(ValueError, match="one discriminator"):
            self.combined(weights, make_discs(3))

    def test_finite_for_random_inputs(self):
        sched = ExpansionSchedule(q=1, alpha=5, beta=5, cropped=False)
        weights = LossWeights(schedule=sched)
        with torch.no_grad():
            combined = self.combined(weights, make_discs(1))
        assert torch.isfinite(combined.gen)
        assert torch.isfinite(combined.disc)
        for v in combined.parts.values():
            assert math.isfinite(v)
