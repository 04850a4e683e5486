import csv
import hashlib
import json
import warnings

import numpy as np
import pytest

from hogmt.bench import (
    clopper_pearson,
    derive_seed,
    run_ber_sweep,
    run_characterization,
    run_spatial_demo,
    snr_penalty,
)
from hogmt.config import parse_config
from hogmt.kernels import impulse_to_kernel, synth_channel
from hogmt.modem import ber_theory

SMALL = """
channel.num_users = 3
channel.num_time = 10
channel.tap_count_min = 2
channel.tap_count_max = 3
channel.gain_std_profile = 0.3
channel.cross_user_coupling = 0.2
channel.delay_decay = 0.5
sweep.modulations = qpsk,16qam
sweep.epsilons = 1e-1,1e-3
sweep.snr_db = 0,10,20
sweep.trials = 3
seed.master = 5
"""


def cfg(extra=""):
    return parse_config(SMALL + extra)


def test_derive_seed_streams():
    a = derive_seed(1, 1, 0)
    assert a == derive_seed(1, 1, 0)
    assert len({a, derive_seed(1, 1, 1), derive_seed(1, 2, 0), derive_seed(2, 1, 0)}) == 4
    assert 0 <= a < 2**64


def test_clopper_pearson_closed_forms():
    n = 50
    lo, hi = clopper_pearson(0, n)
    assert lo == 0 and np.isclose(hi, 1 - 0.025 ** (1 / n))
    lo, hi = clopper_pearson(n, n)
    assert hi == 1 and np.isclose(lo, 0.025 ** (1 / n))
    lo, hi = clopper_pearson(7, n)
    lo2, hi2 = clopper_pearson(n - 7, n)
    assert np.isclose(lo, 1 - hi2) and np.isclose(hi, 1 - lo2)
    assert lo < 7 / n < hi


def test_ideal_bpsk_reference():
    c = parse_config("sweep.arms = ideal\nsweep.modulations = bpsk\nsweep.snr_db = 0\nsweep.trials = 100\n"
                     "channel.num_users = 10\nchannel.num_time = 100\nchannel.tap_count_min = 1\n"
                     "channel.tap_count_max = 1\n")
    res = run_ber_sweep(c)
    b, e, ber, lo, hi, n = res.aggregate[("ideal", "BPSK", None, 0.0)]
    assert b == 100_000 and n == 100
    assert lo <= 0.0786496 <= hi
    assert res.aggregate[("theory", "BPSK", None, 0.0)][2] == pytest.approx(float(ber_theory("bpsk", 0.0)))


def test_outputs_and_manifest(tmp_path):
    res = run_ber_sweep(cfg(), tmp_path)
    names = {"per_trial.csv", "aggregate.csv", "failures.csv", "manifest.json"}
    assert names == {p.name for p in tmp_path.iterdir()}
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["config_sha256"] == cfg().sha256
    assert manifest["version"]
    for name, digest in manifest["files"].items():
        assert hashlib.sha256((tmp_path / name).read_bytes()).hexdigest() == digest
    rows = list(csv.DictReader(open(tmp_path / "per_trial.csv")))
    assert list(rows[0]) == ["method", "modulation", "epsilon", "snr_db", "bits", "errors", "ber", "seed"]
    # 2 mods * 3 snr * 3 trials * (2 eps + zf + thp + ideal)
    assert len(rows) == 2 * 3 * 3 * 5
    assert res.failures == []
    agg = list(csv.DictReader(open(tmp_path / "aggregate.csv")))
    assert {"ci_low", "ci_high", "trials"} <= set(agg[0])
    assert any(r["method"] == "theory" for r in agg)


def test_byte_identical_across_runs_and_workers(tmp_path):
    run_ber_sweep(cfg(), tmp_path / "a", workers=1)
    run_ber_sweep(cfg(), tmp_path / "b", workers=1)
    run_ber_sweep(cfg(), tmp_path / "c", workers=2)
    for name in ("per_trial.csv", "aggregate.csv", "failures.csv", "manifest.json"):
        a = (tmp_path / "a" / name).read_bytes()
        assert a == (tmp_path / "b" / name).read_bytes() == (tmp_path / "c" / name).read_bytes()


def test_single_trial_determinism(tmp_path):
    c = cfg("").replace(**{"sweep.trials": 1})
    run_ber_sweep(c, tmp_path / "a")
    run_ber_sweep(c, tmp_path / "b")
    assert (tmp_path / "a" / "per_trial.csv").read_bytes() == (tmp_path / "b" / "per_trial.csv").read_bytes()


def test_seed_column_is_channel_seed(tmp_path):
    res = run_ber_sweep(cfg())
    for it in res.rows:
        assert it.seed == derive_seed(5, 1, it.trial)


def test_ber_decreases_with_snr_and_epsilon():
    res = run_ber_sweep(cfg().replace(**{"sweep.trials": 6}))
    snr, ber = res.curve("hogmt", "QAM16", 1e-3)
    assert ber[0] > ber[-1]
    assert res.ber("hogmt", "QAM16", 1e-1, 20) >= res.ber("hogmt", "QAM16", 1e-3, 20)


def test_failures_recorded_and_excluded():
    c = cfg("sweep.epsilon_mode = absolute\n").replace(**{"sweep.epsilons": "1e-3,1e6"})
    res = run_ber_sweep(c)
    assert len(res.failures) == 2 * 3  # one per (modulation, trial) for the huge epsilon
    assert all(f[2] == "hogmt" and f[4] == 1e6 for f in res.failures)
    assert ("hogmt", "QPSK", 1e6, 0.0) not in res.aggregate
    assert res.failure_fraction > c.failure_threshold


def test_genie_mode_leaves_constant_modulus_ideal_arm():
    a = run_ber_sweep(cfg("sweep.arms = ideal\n"))
    b = run_ber_sweep(cfg("sweep.arms = ideal\nsweep.power_mode = genie_normalized\n"))
    assert a.aggregate[("ideal", "QPSK", None, 10.0)] == b.aggregate[("ideal", "QPSK", None, 10.0)]


def test_zf_worse_than_hogmt_on_ill_conditioned_channel():
    c = parse_config(
        "channel.num_users = 4\nchannel.num_time = 40\nchannel.tap_count_min = 4\n"
        "channel.tap_count_max = 8\nchannel.gain_std_profile = 0.3\nchannel.cross_user_coupling = 0.3\n"
        "sweep.modulations = qpsk\nsweep.epsilons = 1e-2\nsweep.snr_db = 20\nsweep.trials = 6\n"
        "sweep.arms = hogmt,zf\n"
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = run_ber_sweep(c)
    h = res.aggregate[("hogmt", "QPSK", 1e-2, 20.0)]
    z = res.aggregate[("zf", "QPSK", None, 20.0)]
    assert h[4] < z[3]  # CI-separated


# spatial -------------------------------------------------------------------------


def test_spatial_identity_hogmt_equals_ideal():
    c = parse_config(
        "channel.num_users = 30\nchannel.num_time = 1\nchannel.tap_count_min = 1\nchannel.tap_count_max = 1\n"
        "channel.gain_std_profile = 0\nchannel.cross_user_coupling = 0\nsweep.modulations = 16qam\n"
        "sweep.epsilons = 1e-2\nsweep.snr_db = 0,6\nsweep.trials = 3\nsweep.arms = hogmt,ideal\n"
    )
    res = run_spatial_demo(c)
    by = {}
    for it in res.rows:
        by.setdefault((it.snr_db, it.trial), {})[it.method] = it.errors
    for v in by.values():
        assert v["hogmt"] == v["ideal"]


def test_spatial_coarse_epsilon_worse_at_20db():
    c = parse_config(
        "channel.num_users = 30\nchannel.num_time = 1\nchannel.tap_count_min = 1\nchannel.tap_count_max = 1\n"
        "channel.gain_std_profile = 0.2\nchannel.cross_user_coupling = 0.1\nsweep.modulations = 16qam\n"
        "sweep.epsilons = 1e-1,1e-2\nsweep.snr_db = 20\nsweep.trials = 30\nsweep.arms = hogmt\n"
    )
    res = run_spatial_demo(c)
    assert res.ber("hogmt", "QAM16", 1e-1, 20) > res.ber("hogmt", "QAM16", 1e-2, 20)


# penalty -------------------------------------------------------------------------


def test_snr_penalty():
    snr = np.arange(0, 11, 1.0)
    ref = 10 ** (-snr / 3)
    assert snr_penalty(snr, ref, ref) == pytest.approx(0.0)
    shifted = 10 ** (-(snr - 1.0) / 3)
    # the last reference point would need 11 dB, outside the grid
    assert snr_penalty(snr, ref, shifted) == np.inf
    assert snr_penalty(snr, ref, shifted, floor=1e-3) == pytest.approx(1.0)
    assert snr_penalty(snr, ref, np.full_like(snr, 0.5)) == np.inf
    assert np.isnan(snr_penalty(snr, np.full_like(snr, 1e-6), np.full_like(snr, 0.5)))
    # a test curve that hits zero counts as reached at that grid point
    zero = np.where(snr >= 4, 0.0, ref)
    assert snr_penalty(snr, ref, zero) == pytest.approx(0.0)


# characterization ------------------------------------------------------------------


def test_characterization_deterministic_kernel(tmp_path):
    c = parse_config(
        "channel.num_users = 2\nchannel.num_time = 6\nchannel.tap_count_min = 1\nchannel.tap_count_max = 3\n"
        "channel.gain_std_profile = 0.5\nstats.process = channel\nstats.realizations = 1\nseed.master = 3\n"
    )
    out = run_characterization(c, tmp_path)
    from hogmt.kernels import atomic_kernel, impulse_to_spreading, spreading_to_transfer

    h = synth_channel(c.channel.with_seed(derive_seed(3, 4, 0))).values[0, 0]
    H = atomic_kernel(spreading_to_transfer(impulse_to_spreading(h), 6), np.inf)
    assert out["total_gain_eigen"] == pytest.approx(np.linalg.norm(H) ** 2, rel=1e-9)
    assert out["total_gain_direct"] == pytest.approx(np.linalg.norm(H) ** 2, rel=1e-9)
    for stat in ("ccf", "lsf", "global_scattering", "tf_path_gain"):
        for side in ("eigen", "direct"):
            assert (tmp_path / f"{stat}_{side}.csv").exists()
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["mode_count"] >= 1 and len(summary["top_lambda"]) <= 10


def test_characterization_two_mode_agreement():
    c = parse_config(
        "channel.num_users = 1\nchannel.num_time = 4\nchannel.tap_count_min = 1\nchannel.tap_count_max = 1\n"
        "stats.process = two_mode\nstats.realizations = 300\nstats.pairing = decomposition\n"
    )
    out = run_characterization(c)
    assert max(out["agreement_model"].values()) < 3
    assert max(out["identities"].values()) < 1e-9
