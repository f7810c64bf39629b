import math
from dataclasses import replace

import numpy as np
import pytest

from wfmsim.codec import CameraHint, ObjectHint, SceneHints, decode_full, encode_full
from wfmsim.errors import DomainError, PayloadError
from wfmsim.metrics import mse
from wfmsim.predictor import (
    QUANT_FLOOR_M,
    DegradationProfile,
    PredictorState,
    degradation_reference,
    initial_state,
    predict_step,
    profile_for,
    reconstruct_full,
    repair,
    seed_from_decoded,
)
from wfmsim.world import Camera, SceneObject, SceneState, guidance_for, render, scene_init, scene_step

CLEAN_CAMERA = CameraHint(x=0.0, y=0.0, heading=0.0, checksum_ok=True)


def hint(object_id, **fields):
    values = dict(x=20.0, y=0.0, w=2.0, h=1.5, vx=1.0, vy=0.0)
    values.update(fields)
    return ObjectHint(id=object_id, cls="vehicle", checksum_ok=True, **values)


def hints_of(*objects, failed_checks=0):
    return SceneHints(slot=0, seq=0, header_ok=True, camera=CLEAN_CAMERA, objects=objects, failed_checks=failed_checks)


@pytest.fixture
def seeded(basic_scene):
    return PredictorState(believed=basic_scene, seed_quality=1.0)


class TestProfiles:
    def test_scenario_defaults(self):
        assert profile_for("basic").pos_noise_std_m_per_slot == 0.15
        assert profile_for("busy").pos_noise_std_m_per_slot == 0.40
        crossroad = profile_for("crossroad")
        assert crossroad.heading_noise_rad_per_slot == 0.02
        assert crossroad.yaw_window == (6, 12)

    def test_unknown_scenario(self):
        with pytest.raises(DomainError):
            profile_for("highway")

    def test_state_validation(self, basic_scene):
        with pytest.raises(DomainError):
            PredictorState(believed=basic_scene, seed_quality=1.5)


class TestSeedFromDecoded:
    """Believed scene from decoded full-frame hints"""

    def test_clean_seed_matches_scene(self, basic_scene):
        _, hints, corruption = decode_full(encode_full(render(basic_scene).frame, basic_scene))
        ps = seed_from_decoded(hints, corruption, initial_state("basic"))
        assert ps.believed.objects == basic_scene.objects
        assert ps.believed.camera == basic_scene.camera
        assert ps.seed_quality == 1.0
        assert ps.slots_since_seed == 0
        assert ps.drift_m == QUANT_FLOOR_M

    def test_fully_corrupt_keeps_prior(self, seeded):
        ps = seed_from_decoded(hints_of(hint(0)), 1.0, seeded)
        assert ps.believed == seeded.believed
        assert ps.seed_failed
        assert ps.seed_quality == 0.0

    def test_missing_field_falls_back_to_prior(self):
        prior = PredictorState(believed=SceneState(
            camera=Camera(),
            objects=(SceneObject(id=0, cls="vehicle", x=33.0, y=1.0, w=2.0, h=1.5),),
            scenario="basic",
        ))
        ps = seed_from_decoded(hints_of(hint(0, x=None)), 0.1, prior)
        assert ps.believed.objects[0].x == 33.0
        assert ps.seed_quality == pytest.approx(0.9)

    def test_incomplete_new_object_skipped(self):
        ps = seed_from_decoded(hints_of(hint(0), hint(1, w=None)), 0.0, initial_state("basic"))
        assert [o.id for o in ps.believed.objects] == [0]

    def test_first_duplicate_wins(self):
        ps = seed_from_decoded(hints_of(hint(2, x=10.0), hint(2, x=50.0)), 0.0, initial_state("basic"))
        assert len(ps.believed.objects) == 1
        assert ps.believed.objects[0].x == 10.0

    def test_failed_records_keep_prior_objects(self, seeded):
        ps = seed_from_decoded(hints_of(hint(0, x=15.0), failed_checks=1), 0.1, seeded)
        assert len(ps.believed.objects) == len(seeded.believed.objects)
        assert ps.believed.object_by_id(0).x == 15.0


class TestPredictStep:
    def test_zero_profile_tracks_truth(self, seeded, rng):
        guidance = guidance_for("basic")
        frame, depth, ps = predict_step(seeded, guidance, DegradationProfile.zero(), rng)
        truth = render(scene_step(seeded.believed, guidance))
        np.testing.assert_array_equal(frame, truth.frame)
        np.testing.assert_array_equal(depth, truth.depth)
        assert ps.slots_since_seed == 1
        assert ps.believed.slot == 1

    @pytest.mark.parametrize("scenario", ["basic", "crossroad"])
    @pytest.mark.parametrize("horizon", [1, 5, 20])
    def test_zero_profile_mirrors_world(self, scenario, horizon, rng):
        guidance = guidance_for(scenario)
        truth = scene_init(scenario, 11)
        ps = PredictorState(believed=truth, seed_quality=1.0)
        for _ in range(horizon):
            truth = scene_step(truth, guidance)
            frame, depth, ps = predict_step(ps, guidance, DegradationProfile.zero(scenario), rng)
        expected = render(truth)
        assert ps.believed == truth
        np.testing.assert_array_equal(frame, expected.frame)
        np.testing.assert_array_equal(depth, expected.depth)
        assert ps.slots_since_seed == horizon

    def test_fixed_draw_count(self, seeded):
        guidance = guidance_for("basic")
        empty = initial_state("basic")
        a, b = np.random.default_rng(3), np.random.default_rng(3)
        predict_step(seeded, guidance, profile_for("basic"), a)
        predict_step(empty, guidance, profile_for("basic"), b)
        assert a.standard_normal() == b.standard_normal()

    def test_poor_seed_drifts_faster(self, basic_scene, rng):
        guidance, profile = guidance_for("basic"), profile_for("basic")
        good = predict_step(PredictorState(believed=basic_scene, seed_quality=1.0), guidance, profile, rng)[2]
        poor = predict_step(PredictorState(believed=basic_scene, seed_quality=0.0), guidance, profile, rng)[2]
        assert good.drift_m == pytest.approx(math.hypot(QUANT_FLOOR_M, 0.15))
        assert poor.drift_m == pytest.approx(math.hypot(QUANT_FLOOR_M, 0.30))

    def test_deterministic(self, seeded):
        guidance, profile = guidance_for("basic"), profile_for("basic")
        first = predict_step(seeded, guidance, profile, np.random.default_rng(8))
        second = predict_step(seeded, guidance, profile, np.random.default_rng(8))
        np.testing.assert_array_equal(first[0], second[0])
        assert first[2] == second[2]


class TestRepair:
    """Lateral re-alignment from a decoded mask"""

    @pytest.fixture
    def truth(self):
        wall = SceneObject(id=0, cls="building", x=20.0, y=0.0, w=8.0, h=6.0)
        return SceneState(camera=Camera(), objects=(wall,), scenario="basic")

    @pytest.fixture
    def drifted(self, truth):
        wall = replace(truth.objects[0], y=1.0)
        return PredictorState(believed=replace(truth, objects=(wall,)), slots_since_seed=4, seed_quality=0.5, drift_m=1.0)

    def test_pulls_object_onto_mask(self, truth, drifted):
        frame, ps = repair(drifted, render(truth).mask, 0.0)
        assert abs(ps.believed.objects[0].y) < 0.5
        assert ps.slots_since_seed == 0
        assert ps.seed_quality == 1.0
        assert ps.drift_m == QUANT_FLOOR_M
        truth_frame = render(truth).frame
        assert mse(frame, truth_frame) < mse(render(drifted.believed).frame, truth_frame)

    @pytest.mark.parametrize("scenario, seed", [("basic", 0), ("busy", 1), ("crossroad", 2)])
    def test_exact_state_is_left_alone(self, scenario, seed):
        truth = scene_init(scenario, seed)
        for _ in range(3):
            truth = scene_step(truth)
        ps = PredictorState(believed=truth, seed_quality=1.0)
        frame, repaired = repair(ps, render(truth).mask, 0.0)
        np.testing.assert_array_equal(frame, render(truth).frame)
        assert repaired.believed.objects == truth.objects

    def test_corrupt_mask_is_ignored(self, truth, drifted):
        frame, ps = repair(drifted, render(truth).mask, 0.6)
        assert ps == drifted
        np.testing.assert_array_equal(frame, render(drifted.believed).frame)

    def test_nothing_visible(self, truth):
        ps = initial_state("basic")
        frame, repaired = repair(ps, render(truth).mask, 0.0)
        assert repaired == ps

    def test_wrong_shape(self, drifted):
        with pytest.raises(PayloadError):
            repair(drifted, np.zeros((32, 64)), 0.0)


class TestReconstructFull:
    def test_agreeing_render_is_used(self, basic_scene):
        truth_frame = render(basic_scene).frame
        decoded, _, _ = decode_full(encode_full(truth_frame, basic_scene))
        out = reconstruct_full(decoded, PredictorState(believed=basic_scene, seed_quality=1.0))
        np.testing.assert_array_equal(out, truth_frame)

    def test_disagreeing_cells_keep_decoded(self, basic_scene):
        decoded, _, _ = decode_full(encode_full(render(basic_scene).frame, basic_scene))
        out = reconstruct_full(decoded, initial_state("basic"))
        assert mse(out, decoded) < mse(render(initial_state("basic").believed).frame, decoded)


class TestDegradationReference:
    """Prediction-only loss curve from a perfect seed"""

    def test_shape_and_monotone(self):
        ref = degradation_reference("basic", 10, 3)
        assert ref.shape == (11,)
        assert ref[0] == 0.0
        assert np.all(np.diff(ref) >= 0)
        assert ref[-1] > 0.0

    def test_deterministic(self):
        np.testing.assert_array_equal(degradation_reference("busy", 6, 2), degradation_reference("busy", 6, 2))

    def test_zero_profile_is_flat(self):
        ref = degradation_reference("basic", 5, 2, profile=DegradationProfile.zero())
        assert np.all(ref == 0.0)

    def test_bad_arguments(self):
        with pytest.raises(DomainError):
            degradation_reference("basic", 0, 3)
        with pytest.raises(DomainError):
            degradation_reference("basic", 5, 0)


@pytest.mark.slow
class TestDriftLaws:
    """Monte-Carlo orderings over many seeds"""

    def test_basic_degrades_slowest(self):
        basic = degradation_reference("basic", 6, 200)[6]
        busy = degradation_reference("busy", 6, 200)[6]
        crossroad = degradation_reference("crossroad", 6, 200, start_slot=6)[6]
        assert basic < busy
        assert basic < crossroad

    def test_position_error_grows_with_root_horizon(self, basic_scene):
        guidance = guidance_for("basic")
        profile = DegradationProfile(scenario="basic", pos_noise_std_m_per_slot=0.4, velocity_bias_frac=0.0)
        start = PredictorState(believed=basic_scene, seed_quality=1.0)
        errors = {4: [], 16: []}
        for seed in range(300):
            rng = np.random.default_rng(seed)
            ps = start
            for k in range(1, 17):
                ps = predict_step(ps, guidance, profile, rng)[2]
                if k in errors:
                    obj, origin = ps.believed.objects[0], basic_scene.objects[0]
                    errors[k].append(obj.x - (origin.x + k * guidance.slot_seconds * origin.vx))
        ratio = np.std(errors[16]) / np.std(errors[4])
        assert ratio == pytest.approx(2.0, rel=0.2)
        assert np.std(errors[4]) == pytest.approx(0.4 * 2.0, rel=0.2)

    def test_repair_with_perfect_mask_helps(self):
        guidance = guidance_for("basic")
        profile = DegradationProfile(scenario="basic", pos_noise_std_m_per_slot=1.0)
        before, after = [], []
        for seed in range(40):
            truth = scene_init("basic", seed)
            ps = PredictorState(believed=truth, seed_quality=1.0)
            rng = np.random.default_rng(seed)
            for _ in range(4):
                truth = scene_step(truth, guidance)
                frame, _, ps = predict_step(ps, guidance, profile, rng)
            target = render(truth)
            repaired, _ = repair(ps, target.mask, 0.0)
            before.append(mse(frame, target.frame))
            after.append(mse(repaired, target.frame))
        assert np.mean(after) <= np.mean(before)

    @pytest.mark.parametrize("corruption", [0.0, 0.2, 0.4])
    def test_repair_never_hurts_on_average(self, corruption):
        guidance = guidance_for("basic")
        profile = DegradationProfile(scenario="basic", pos_noise_std_m_per_slot=1.0)
        before, after = [], []
        for seed in range(200):
            truth = scene_init("basic", seed)
            ps = PredictorState(believed=truth, seed_quality=1.0)
            rng = np.random.default_rng(seed)
            for _ in range(4):
                truth = scene_step(truth, guidance)
                frame, _, ps = predict_step(ps, guidance, profile, rng)
            target = render(truth)
            repaired, _ = repair(ps, target.mask, corruption)
            before.append(mse(frame, target.frame))
            after.append(mse(repaired, target.frame))
        assert np.mean(after) <= np.mean(before)
