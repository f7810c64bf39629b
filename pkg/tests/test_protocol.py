import math

import numpy as np
import pytest
from pydantic import ValidationError

from wfmsim.codec import DEPTH_BYTES, TxMode
from wfmsim.errors import ConfigError
from wfmsim.predictor import DegradationProfile
from wfmsim.protocol import (
    CSV_COLUMNS,
    LedgerEntry,
    SessionConfig,
    feedback_decision,
    ledger_totals,
    mode_select,
    run_session,
)
from wfmsim.scheduler import PlanEntry, SchedulerPlan, plan_active

CLEAR_LINK = 200.0
DRIFTY = DegradationProfile(scenario="basic", pos_noise_std_m_per_slot=2.0)


def entry(slot, mode, feedback=0):
    return LedgerEntry(slot=slot, mode=mode, forward_bytes=mode.forward_bytes, feedback_bytes=feedback, snr_db=5.0)


def transmitted_slots(trace):
    return [e.slot for e in trace.ledger if e.mode != TxMode.PREDICT and e.slot > 0]


class TestSessionConfig:
    def test_defaults(self):
        cfg = SessionConfig()
        assert cfg.strategy == "feedback_active"
        assert cfg.allowed_modes == (TxMode.FULL, TxMode.PART)
        assert cfg.uses_feedback

    def test_fixed_interval_has_no_feedback(self):
        assert not SessionConfig(strategy="fixed_interval").uses_feedback

    @pytest.mark.parametrize("field, value", [("sigma", 1.0), ("sigma", 0.0), ("feedback_delay_slots", 2), ("interval", 0)])
    def test_out_of_range(self, field, value):
        with pytest.raises(ValidationError):
            SessionConfig(**{field: value})

    def test_threshold_ordering(self):
        with pytest.raises(ValidationError):
            SessionConfig(theta_full_db=-3.0, theta_part_db=0.0)


class TestModeSelect:
    """Full first, then Part, by SNR threshold"""

    def test_not_requested(self):
        assert mode_select(30.0, SessionConfig(), False) == (TxMode.PREDICT, False)

    @pytest.mark.parametrize("snr, mode", [(5.0, TxMode.FULL), (3.0, TxMode.FULL), (0.0, TxMode.PART), (-2.0, TxMode.PART)])
    def test_feedback_active(self, snr, mode):
        assert mode_select(snr, SessionConfig(), True).mode == mode

    def test_below_every_threshold(self):
        assert mode_select(-5.0, SessionConfig(), True) == (TxMode.PREDICT, True)

    def test_full_only_defers(self):
        assert mode_select(0.0, SessionConfig(strategy="feedback_full"), True).infeasible

    def test_part_only(self):
        assert mode_select(20.0, SessionConfig(strategy="feedback_part"), True).mode == TxMode.PART

    def test_predict_only_never_sends(self):
        assert mode_select(20.0, SessionConfig(strategy="predict_only"), True).mode == TxMode.PREDICT


class TestLedger:
    def test_forward_bytes_follow_mode(self):
        with pytest.raises(ValidationError):
            LedgerEntry(slot=1, mode=TxMode.PART, forward_bytes=2048, snr_db=0.0)

    def test_feedback_size(self):
        with pytest.raises(ValidationError):
            LedgerEntry(slot=1, mode=TxMode.PREDICT, forward_bytes=0, feedback_bytes=50, snr_db=0.0)

    def test_totals(self):
        entries = [
            entry(0, TxMode.FULL),
            entry(1, TxMode.PART, DEPTH_BYTES),
            entry(2, TxMode.PREDICT, DEPTH_BYTES),
            entry(3, TxMode.PART, DEPTH_BYTES),
        ]
        assert ledger_totals(entries) == {"forward_bytes": 3072, "feedback_bytes": 306, "transmission_count": 3}
        assert ledger_totals(entries, True)["forward_bytes"] == 3378

    def test_feedback_decision(self):
        true = np.full((8, 16), 10.0)
        fed = true.copy()
        fed[:4] = 20.0
        assert feedback_decision(true, fed, 0.3)
        assert not feedback_decision(true, fed, 0.5)


class TestRunSession:
    """Whole sessions on fixed links"""

    def test_predict_only(self):
        trace = run_session("basic", 10.0, SessionConfig(strategy="predict_only"), seed=1)
        assert len(trace) == 21
        first = trace.ledger[0]
        assert (first.mode, first.triggered_by, first.forward_bytes) == (TxMode.FULL, "initial", 2048)
        assert transmitted_slots(trace) == []
        assert ledger_totals(trace) == {"forward_bytes": 2048, "feedback_bytes": 0, "transmission_count": 1}

    def test_perfect_initial_seed(self):
        record = run_session("basic", CLEAR_LINK, SessionConfig(strategy="predict_only"), seed=2).records[0]
        assert record.mse == 0.0
        assert record.psnr_db == math.inf
        assert record.miou == 1.0

    @pytest.mark.parametrize("snr, mode", [(20.0, TxMode.FULL), (0.0, TxMode.PART)])
    def test_fixed_interval(self, snr, mode):
        trace = run_session("basic", snr, SessionConfig(strategy="fixed_interval", interval=6), seed=0)
        assert transmitted_slots(trace) == [6, 12, 18]
        assert {trace.ledger[s].mode for s in (6, 12, 18)} == {mode}
        assert {trace.ledger[s].triggered_by for s in (6, 12, 18)} == {"schedule"}

    def test_feedback_triggers_on_threshold(self):
        cfg = SessionConfig(strategy="feedback_part", sigma=0.1)
        trace = run_session("busy", CLEAR_LINK, cfg, seed=4, profile=DRIFTY)
        frame = trace.to_frame()
        later = frame[frame.slot > 0]
        assert (later.feedback_bytes == DEPTH_BYTES).all()
        sent = later[later["mode"] != "Predict"]
        assert (sent["mode"] == "Part").all()
        assert (sent.triggered_by == "feedback").all()
        assert (sent.delta_exceed > cfg.sigma).all()
        assert (later[later["mode"] == "Predict"].delta_exceed <= cfg.sigma).all()

    @pytest.mark.parametrize("delay", [0, 1])
    def test_first_trigger_follows_drift(self, delay):
        cfg = SessionConfig(strategy="feedback_part", sigma=0.3, feedback_delay_slots=delay)
        baseline = run_session("basic", CLEAR_LINK, SessionConfig(strategy="predict_only"), seed=3, profile=DRIFTY)
        exceeded = baseline.to_frame().delta_exceed.to_numpy()[1:] > cfg.sigma
        assert exceeded.any()
        first = int(np.argmax(exceeded)) + 1

        trace = run_session("basic", CLEAR_LINK, cfg, seed=3, profile=DRIFTY)
        assert transmitted_slots(trace)[0] == first + delay
        assert trace.ledger[first + delay].triggered_by == "feedback"
        assert all(trace.ledger[s].mode == TxMode.PREDICT for s in range(1, first + delay))

    def test_unforeseen_blockage_defers(self, handover_forecast, blocked_forecast, convex_reference):
        plan = plan_active(handover_forecast, convex_reference)
        assert plan.slots == (7, 14)
        trace = run_session("basic", blocked_forecast, SessionConfig(), plan=plan, seed=5)
        assert all(trace.ledger[s].mode == TxMode.PREDICT for s in range(7, 14))
        assert trace.ledger[14].mode == TxMode.FULL
        assert trace.ledger[14].triggered_by == "schedule"

    def test_blockage_recovery_is_feedback_driven(self, blocked_forecast):
        lost = DegradationProfile(scenario="basic", pos_noise_std_m_per_slot=4.0)
        trace = run_session("basic", blocked_forecast, SessionConfig(sigma=0.1), seed=5, profile=lost)
        assert all(trace.ledger[s].mode == TxMode.PREDICT for s in range(7, 14))
        assert trace.ledger[14].mode != TxMode.PREDICT
        assert trace.ledger[14].triggered_by == "feedback"

    def test_plan_beyond_horizon(self):
        plan = SchedulerPlan(entries=(PlanEntry(slot=25, mode=TxMode.PART),))
        with pytest.raises(ConfigError):
            run_session("basic", 10.0, SessionConfig(), plan=plan)

    def test_deterministic(self):
        cfg = SessionConfig(strategy="feedback_active")
        assert run_session("crossroad", 2.0, cfg, seed=9).to_csv() == run_session("crossroad", 2.0, cfg, seed=9).to_csv()


class TestSessionTrace:
    @pytest.fixture
    def trace(self):
        return run_session("basic", CLEAR_LINK, SessionConfig(strategy="feedback_full", sigma=0.2), seed=6)

    def test_csv_layout(self, trace, tmp_path):
        path = tmp_path / "trace.csv"
        text = trace.to_csv(path)
        lines = text.splitlines()
        assert lines[0] == ",".join(CSV_COLUMNS)
        assert len(lines) == 22
        assert path.read_text() == text

    def test_infinite_psnr_written(self, trace):
        assert ",inf," in trace.to_csv().splitlines()[1]

    def test_ledger_identity(self, trace):
        frame = trace.to_frame()
        totals = ledger_totals(trace)
        assert totals["forward_bytes"] == frame.forward_bytes.sum()
        assert totals["feedback_bytes"] == 20 * DEPTH_BYTES
        assert totals["transmission_count"] == (frame["mode"] != "Predict").sum()

    def test_summary(self, trace):
        summary = trace.summary()
        assert summary["num_slots"] == 20
        assert summary["config"]["strategy"] == "feedback_full"
        assert summary["totals"] == ledger_totals(trace)


class TestLedgerBudgets:
    """Byte totals for mixed mode sequences"""

    @pytest.mark.parametrize("parts, total", [(4, 4096), (6, 5120), (10, 7168)])
    def test_one_full_plus_parts(self, parts, total):
        entries = [entry(0, TxMode.FULL)] + [entry(s, TxMode.PART) for s in range(1, parts + 1)]
        assert ledger_totals(entries)["forward_bytes"] == total

    def test_all_full(self):
        entries = [entry(s, TxMode.FULL) for s in range(13)]
        assert ledger_totals(entries)["forward_bytes"] == 26624


@pytest.mark.slow
class TestStrategyOrderings:
    """Paired comparisons over 20 seeds"""

    SEEDS = range(20)

    @staticmethod
    def mean_mse(link, strategy, plan=None):
        return np.mean([
            run_session("basic", link, SessionConfig(strategy=strategy), plan, seed).to_frame().mse.mean()
            for seed in TestStrategyOrderings.SEEDS
        ])

    def test_part_beats_prediction(self):
        assert self.mean_mse(5.0, "feedback_part") <= self.mean_mse(5.0, "predict_only")

    def test_active_beats_part_on_handover(self, handover_forecast):
        from wfmsim.predictor import degradation_reference
        from wfmsim.scheduler import normalize_reference

        reference = normalize_reference(degradation_reference("basic", 20, 20))
        plan = plan_active(handover_forecast, reference)
        assert self.mean_mse(handover_forecast, "feedback_active", plan) <= self.mean_mse(handover_forecast, "feedback_part")

    def test_fewer_triggers_at_higher_snr(self):
        cfg = SessionConfig(strategy="feedback_part")
        counts = []
        for snr in (0.0, 5.0, 10.0):
            triggered = [
                sum(e.triggered_by == "feedback" and e.mode != TxMode.PREDICT for e in run_session("basic", snr, cfg, seed=seed).ledger)
                for seed in self.SEEDS
            ]
            counts.append(np.mean(triggered))
        assert counts[0] >= counts[1] >= counts[2]
