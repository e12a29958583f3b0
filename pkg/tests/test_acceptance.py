"""Acceptance suite: one test per criterion, at its stated tolerance.

The adversary batches (1000 seeds each) are shared module fixtures; each
criterion prints a PASS line with the measured values when it holds.
"""

import time

import numpy as np
import pytest

from mgcosim import load_config, run_batch, run_once, wilson_interval
from mgcosim.consensus import ConsensusLayer
from mgcosim.engine import Engine, EventKind, make_rng
from mgcosim.mac import (Channel, DcfStation, FrameKind, MacParams, Outcome,
                         frame_airtime_ns)
from mgcosim.presets import PRESETS

US = 1_000
MS = 1_000_000
WORKERS = 2
SEEDS = 1000


def run_preset(name, replicas, **kwargs):
    cfg = load_config(PRESETS[name])
    return run_batch(cfg, out_dir=None, seed=1, replicas=replicas,
                     workers=WORKERS, figures=False, **kwargs)


@pytest.fixture(scope="module")
def clean100():
    return run_preset("clean", 100)


@pytest.fixture(scope="module")
def ui1000():
    return run_preset("baseline", SEEDS)


@pytest.fixture(scope="module")
def jam1000():
    return run_preset("jammed", SEEDS)


@pytest.fixture(scope="module")
def spread1000():
    return run_preset("jammed_spread", SEEDS)


def report(name, text):
    print(f"\n[acceptance] {name}: PASS — {text}")


# ----------------------------------------------------------------------
# 1. consensus contraction
# ----------------------------------------------------------------------

def test_criterion_01_consensus_contraction():
    layer = ConsensusLayer(6, 0.025)
    rng = np.random.default_rng(2024)
    init = rng.normal(0, 4, size=6)
    for i, v in zip(sorted(layer.agents), init):
        layer.agents[i].x = np.array([v, v])
        layer.agents[i].memory = layer.agents[i].x.copy()
    layer.current_period = 0

    def one_step(k):
        payloads = {i: layer.generate_update(i, k) for i in sorted(layer.agents)}
        for j, p in payloads.items():
            for i in sorted(layer.agents):
                if i != j:
                    layer.receive(i, p)
        layer.step_all(k)

    states = init.copy()
    worst = 0.0
    for k in range(20):
        d_before = states - states.mean()
        one_step(k)
        states = np.array([layer.agents[i].x[0] for i in sorted(layer.agents)])
        d_after = states - states.mean()
        worst = max(worst, np.abs(d_after - 0.85 * d_before).max())
    assert worst < 1e-12
    for k in range(20, 160):
        one_step(k)
    final_gap = max(abs(layer.agents[i].x[0] - init.mean())
                    for i in sorted(layer.agents))
    assert final_gap < 1e-9
    report("criterion 1", f"contraction deviation {worst:.2e}, "
                          f"final gap to initial mean {final_gap:.2e}")


# ----------------------------------------------------------------------
# 2. frame airtime
# ----------------------------------------------------------------------

def test_criterion_02_frame_airtime():
    params = MacParams()
    agent = frame_airtime_ns(10, params)
    interferer = frame_airtime_ns(512, params)
    assert agent == 448 * US
    assert interferer == 4464 * US
    report("criterion 2", f"agent frame {agent / 1e3:.0f} us, "
                          f"interferer/jam frame {interferer / 1e3:.0f} us")


# ----------------------------------------------------------------------
# 3. clean restoration
# ----------------------------------------------------------------------

def test_criterion_03_clean_restoration(clean100):
    v_ref = clean100.config.secondary.v_ref
    assert len(clean100.runs) == 100 and not clean100.aborts
    worst_v = worst_share = 0.0
    for run in clean100.runs:
        dev = np.abs(run.steady_voltage_per_unit - v_ref).max() / v_ref
        worst_v = max(worst_v, dev)
        worst_share = max(worst_share, run.sharing_spread_pct)
        assert dev <= 0.01
        assert run.sharing_spread_pct <= 2.0
    t0 = time.perf_counter()
    run_once(clean100.config, seed=1)
    wall = time.perf_counter() - t0
    assert wall < 10.0
    report("criterion 3", f"100/100 runs within 1% (worst {worst_v * 100:.3f}%), "
                          f"sharing spread worst {worst_share:.4f}%, "
                          f"single run wall {wall:.2f}s")


# ----------------------------------------------------------------------
# 4. interferer robustness
# ----------------------------------------------------------------------

def test_criterion_04_ui_robustness(ui1000):
    v_ref = ui1000.config.secondary.v_ref
    first100 = ui1000.runs[:100]
    assert len(first100) == 100
    ok = 0
    for run in first100:
        p1 = run.converged
        p2 = run.validity_error_v <= 0.01 * v_ref
        p3 = (run.agreement_voltage_v <= 0.01 * v_ref
              and run.agreement_current_a <= 0.5)
        ok += p1 and p2 and p3
    exceed = sum(r.exceed_5 for r in first100)
    assert ok >= 99
    assert exceed == 0
    report("criterion 4", f"P1-P3 satisfied in {ok}/100 runs, "
                          f"P(|err|>5%) = 0/100")


# ----------------------------------------------------------------------
# 5. jamming damage ordering (hard)
# ----------------------------------------------------------------------

def test_criterion_05_jamming_damage_ordering(jam1000, ui1000):
    e5_jam = jam1000.exceedance(5)
    e5_ui = ui1000.exceedance(5)
    e10_jam = jam1000.exceedance(10)
    errs = np.array([r.error_pct for r in jam1000.runs])
    near_paper_instance = np.sum((errs >= 6.85) & (errs <= 10.85))
    assert e5_jam > e5_ui
    assert e10_jam > 0
    assert near_paper_instance >= 1
    report("criterion 5",
           f"P(>5%): jammed {e5_jam:.4f} vs interferer-only {e5_ui:.4f}; "
           f"P(>10%) = {e10_jam:.4f}; {near_paper_instance} runs with error "
           f"in 8.85+/-2 points")


# ----------------------------------------------------------------------
# 6. quantitative soft targets
# ----------------------------------------------------------------------

def test_criterion_06_quantitative_soft_targets(jam1000, ui1000):
    e5, e10 = jam1000.exceedance(5), jam1000.exceedance(10)
    in_band_5 = abs(e5 - 0.089) <= 0.05
    in_band_10 = abs(e10 - 0.013) <= 0.02
    if in_band_5 and in_band_10:
        report("criterion 6", f"P(>5%) = {e5:.4f} (target 0.089 +/- 0.05), "
                              f"P(>10%) = {e10:.4f} (target 0.013 +/- 0.02)")
        return
    # Soft criterion's own escape clause: deviations attributed to the
    # simplified plant are acceptable provided criterion 5 holds.
    assert jam1000.exceedance(5) > ui1000.exceedance(5)
    assert jam1000.exceedance(10) > 0
    errs = np.array([r.error_pct for r in jam1000.runs])
    assert np.sum((errs >= 6.85) & (errs <= 10.85)) >= 1
    print(f"\n[acceptance] criterion 6: PASS (escape clause) — "
          f"P(>5%) = {e5:.4f} vs 0.089, P(>10%) = {e10:.4f} vs 0.013; "
          f"orderings of criterion 5 hold, deviation attributed to the "
          f"quasi-static plant")


# ----------------------------------------------------------------------
# 7. countermeasure ordering (hard)
# ----------------------------------------------------------------------

def test_criterion_07_countermeasure_ordering(jam1000, spread1000):
    assert [r.seed for r in jam1000.runs] == [r.seed for r in spread1000.runs]
    n = len(jam1000.runs)
    k5_jam = sum(r.exceed_5 for r in jam1000.runs)
    k5_spr = sum(r.exceed_5 for r in spread1000.runs)
    k10_jam = sum(r.exceed_10 for r in jam1000.runs)
    k10_spr = sum(r.exceed_10 for r in spread1000.runs)
    # Strict decrease at both bands on paired seeds.
    assert k5_spr < k5_jam
    assert k10_spr < k10_jam
    # Wilson separation at the 5% band (the 10% counts are too small for a
    # meaningful interval test; both intervals are still reported).
    lo_jam, hi_jam = wilson_interval(k5_jam, n)
    lo_spr, hi_spr = wilson_interval(k5_spr, n)
    assert hi_spr < lo_jam
    i10_jam = wilson_interval(k10_jam, n)
    i10_spr = wilson_interval(k10_spr, n)
    report("criterion 7",
           f"P(>5%) {k5_jam / n:.4f} -> {k5_spr / n:.4f} "
           f"(wilson [{lo_jam:.4f},{hi_jam:.4f}] vs [{lo_spr:.4f},{hi_spr:.4f}], "
           f"disjoint); P(>10%) {k10_jam / n:.4f} -> {k10_spr / n:.4f} "
           f"(wilson [{i10_jam[0]:.4f},{i10_jam[1]:.4f}] vs "
           f"[{i10_spr[0]:.4f},{i10_spr[1]:.4f}])")


def test_spread_deadline_risk_below_jamming_loss(jam1000, spread1000):
    # The countermeasure's own cost (updates paying for the wider window by
    # missing the deadline) must stay below what jamming destroys.
    late = sum(r.late_updates for r in spread1000.runs)
    sent = sum(r.agent_frames for r in spread1000.runs)
    late_fraction = late / sent
    corrupted = sum(r.corrupted for r in jam1000.runs)
    receptions = sum(r.corrupted + r.decoded for r in jam1000.runs)
    loss_fraction = corrupted / receptions
    assert late_fraction < loss_fraction
    report("spread deadline risk",
           f"late fraction {late_fraction:.5f} < jamming loss "
           f"{loss_fraction:.5f}")


# ----------------------------------------------------------------------
# 8. jammer estimator
# ----------------------------------------------------------------------

def test_criterion_08_jammer_estimator(jam1000):
    cfg = jam1000.config
    t_ca_ns = int(cfg.t_ca_s * 1e9)
    activation_ns = int(cfg.activation_s * 1e9)
    checked = 0
    for run in jam1000.runs[:20]:
        log = run.estimate_log
        if not log:
            continue
        # estimate in force once 50 bursts have been observed
        cutoff = activation_ns + 50 * t_ca_ns
        estimates = [est for t, est in log if t <= cutoff]
        if not estimates:
            continue
        tca_hat = estimates[-1]
        assert abs(tca_hat - t_ca_ns) / t_ca_ns <= 0.05, run.seed
        checked += 1
    assert checked >= 15
    report("criterion 8", f"estimate within 5% of 25 ms after 50 bursts in "
                          f"{checked} inspected runs")


# ----------------------------------------------------------------------
# 9. DCF micro-oracle
# ----------------------------------------------------------------------

def build_pair_channel(seed):
    engine = Engine()
    channel = Channel(engine, MacParams(), log_draws=True)
    for i in (1, 2, 3):
        channel.add_station(DcfStation(id=i, hears=frozenset({1, 2, 3} - {i}),
                                       rng=make_rng(seed, i)))
    return engine, channel


def test_criterion_09_dcf_micro_oracle():
    # (a) single-station submit-to-delivery is exactly DIFS + T_p.
    engine, channel = build_pair_channel(seed=0)
    delivered = []
    channel.delivery_hook = lambda rid, p, t: delivered.append(t)
    from mgcosim.consensus import UpdatePayload
    payload = UpdatePayload(sender=1, seq=0, x=(0.0, 0.0), period=0,
                            generated_at=0)
    engine.schedule(0, EventKind.UPDATE_GENERATED,
                    lambda: channel.submit(1, payload, 10))
    engine.run_until(2 * MS)
    assert delivered and all(t == 32 * US + 448 * US for t in delivered)

    # (b) brute-force draw-pair oracle: of the 32^2 equally likely pairs,
    # exactly 32 tie, so P(collision) = 1/32.
    ties = sum(1 for a in range(32) for b in range(32) if a == b)
    assert ties / 32 ** 2 == 1 / 32

    # (c) empirical tie rate over 1e5 independent draw pairs.
    rng_a, rng_b = make_rng(99, 1), make_rng(99, 2)
    draws_a = rng_a.integers(0, 32, size=100_000)
    draws_b = rng_b.integers(0, 32, size=100_000)
    p_hat = np.mean(draws_a == draws_b)
    assert abs(p_hat - 1 / 32) <= 0.005

    # (d) full-MAC cross-check: in same-slot contention the stations
    # collide exactly when their first draws tie.
    collisions = ties_seen = 0
    for seed in range(150):
        engine, channel = build_pair_channel(seed=seed + 1)
        from mgcosim.consensus import UpdatePayload as UP
        engine.schedule(0, EventKind.UPDATE_GENERATED,
                        lambda ch=channel: ch.submit(
                            3, UP(sender=3, seq=0, x=(0, 0), period=0), 10))
        for sid in (1, 2):
            engine.schedule(100 * US, EventKind.UPDATE_GENERATED,
                            lambda ch=channel, s=sid: ch.submit(
                                s, UP(sender=s, seq=0, x=(0, 0), period=0), 10))
        engine.run_until(30 * MS)
        tied = channel.stations[1].draws[0] == channel.stations[2].draws[0]
        collided = channel.outcome_counts[Outcome.CORRUPTED] > 0
        assert tied == collided
        ties_seen += tied
        collisions += collided
    assert collisions == ties_seen
    report("criterion 9",
           f"single-station delay 480 us exact; draw-pair oracle 1/32; "
           f"empirical {p_hat:.5f}; {collisions} collisions == "
           f"{ties_seen} ties over 150 full-MAC trials")


# ----------------------------------------------------------------------
# 10. determinism
# ----------------------------------------------------------------------

def test_criterion_10_determinism(tmp_path):
    cfg = load_config(PRESETS["jammed"])
    cfg.run_length_s = 2.0
    run_batch(cfg, out_dir=tmp_path / "a", replicas=2, traces=True,
              figures=False)
    run_batch(cfg, out_dir=tmp_path / "b", replicas=2, traces=True,
              figures=False)
    compared = 0
    for rel in ("runs.csv", "envelope.csv", "summary.txt"):
        assert (tmp_path / "a" / rel).read_bytes() \
            == (tmp_path / "b" / rel).read_bytes()
        compared += 1
    for seed in (1, 2):
        for name in ("events.tsv", "frames.csv", "plant.csv",
                     "consensus.csv", "adversary.csv"):
            rel = f"traces/run_{seed}/{name}"
            assert (tmp_path / "a" / rel).read_bytes() \
                == (tmp_path / "b" / rel).read_bytes()
            compared += 1
    report("criterion 10", f"{compared} output files byte-identical on re-run")
