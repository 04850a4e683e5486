"""End-to-end acceptance criteria, one test per criterion.

Each test prints a single ``ACCEPTANCE <n> PASS|FAIL: ...`` line with the
measured quantities before asserting. Criteria 4 and 5 share one sweep on
``configs/spacetime16qam.cfg``; criterion 6 runs ``configs/spatial30.cfg``.
"""

import time
import warnings
from pathlib import Path

import numpy as np
import pytest

from hogmt.bench import build_ensemble, run_ber_sweep, run_spatial_demo, snr_penalty
from hogmt.config import load_config, parse_config
from hogmt.decompose import ensemble_klt, hogmt_decompose, reconstruct, verify_duality
from hogmt.kernels import (
    ChannelConfig,
    apply_kernel,
    atomic_kernel,
    impulse_to_kernel,
    impulse_to_spreading,
    spreading_to_impulse,
    spreading_to_transfer,
    synth_channel,
    transfer_to_spreading,
)
from hogmt.modem import ber_theory
from hogmt.precoder import precode, precode_spatial
from hogmt.statistics import (
    StatsReport,
    ccf_direct,
    ccf_from_eigen,
    global_scattering,
    global_scattering_direct,
    lsf_direct,
    lsf_from_eigen,
    tf_path_gain,
    tf_path_gain_direct,
    total_gain,
    total_gain_direct,
)
from conftest import crandn

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {n} {'PASS' if ok else 'FAIL'}: {detail}")

    return emit


def _separated(hi_arm, lo_arm):
    """CI of ``hi_arm`` lies strictly above the CI of ``lo_arm``."""
    return hi_arm[3] > lo_arm[4]


# 1 -------------------------------------------------------------------------------


def test_c1_interference_free_reconstruction(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = 0.0
    for i in range(100):
        k = crandn(rng, 4, 8, 4, 8)
        s = crandn(rng, 4, 8)
        x, _ = precode(hogmt_decompose(k), s)
        worst = max(worst, np.linalg.norm(s - apply_kernel(k, x.values)) / np.linalg.norm(s))
    for i in range(100):
        cfg = ChannelConfig(4, 8, 1, 4, 1.0, 0.5, 0.5, seed=1000 + i)
        k = impulse_to_kernel(synth_channel(cfg))
        s = crandn(rng, 4, 8)
        x, _ = precode(hogmt_decompose(k), s)
        worst = max(worst, np.linalg.norm(s - apply_kernel(k, x.values)) / np.linalg.norm(s))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-9 and elapsed < 10
    report(1, ok, f"max ||s-Hx||/||s|| = {worst:.2e} over 200 kernels (< 1e-9), {elapsed:.1f} s (< 10 s)")
    assert ok


# 2 -------------------------------------------------------------------------------


def _decomp_metrics(k):
    es = hogmt_decompose(k)
    n = len(es)
    P, F = es.psi.reshape(n, -1), es.phi.reshape(n, -1)
    eye = np.eye(n)
    ortho = max(np.abs(P @ P.conj().T - eye).max(), np.abs(F @ F.conj().T - eye).max())
    nk = np.linalg.norm(k)
    recon = np.linalg.norm(reconstruct(es) - k) / nk
    mask = es.sigma > 1e-8 * es.sigma[0]
    dual = float(verify_duality(k, es)[mask].max())
    parseval = abs(np.sum(es.sigma**2) - nk**2) / nk**2
    return ortho, recon, dual, parseval


def test_c2_decomposition_correctness(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    kernels = [crandn(rng, 4, 8, 4, 8) for _ in range(20)]
    kernels.append(impulse_to_kernel(synth_channel(ChannelConfig(10, 100, 10, 20, 1.0, 0.3, 1.0, seed=1))))
    kernels.append(impulse_to_kernel(synth_channel(load_config(CONFIGS / "spacetime16qam.cfg").channel.with_seed(1))))
    m = np.array([_decomp_metrics(k) for k in kernels])
    worst = m.max(axis=0)
    elapsed = time.perf_counter() - t0
    ok = worst[0] < 1e-10 and worst[1] < 1e-9 and worst[2] < 1e-8 and worst[3] < 1e-9 and elapsed < 60
    report(
        2,
        ok,
        f"ortho {worst[0]:.1e} (<1e-10), recon {worst[1]:.1e} (<1e-9), duality {worst[2]:.1e} (<1e-8), "
        f"Parseval {worst[3]:.1e} (<1e-9) on 20 random + 2 full-scale kernels, {elapsed:.1f} s (< 60 s)",
    )
    assert ok


# 3 -------------------------------------------------------------------------------


def test_c3_awgn_references(report):
    t0 = time.perf_counter()
    worst = 0.0
    lines = []
    for mod, k in (("bpsk", 1), ("qpsk", 2), ("16qam", 4), ("64qam", 6)):
        trials = int(np.ceil(100_000 / (1000 * k)))
        cfg = parse_config(
            f"channel.num_users = 10\nchannel.num_time = 100\nchannel.tap_count_min = 1\n"
            f"channel.tap_count_max = 1\nsweep.arms = ideal\nsweep.modulations = {mod}\n"
            f"sweep.snr_db = 0,4,8,12\nsweep.trials = {trials}\nseed.master = 3\n"
        )
        res = run_ber_sweep(cfg)
        for snr in (0.0, 4.0, 8.0, 12.0):
            bits, errors, ber, *_ = res.aggregate[("ideal", cfg.modulations[0], None, snr)]
            assert bits >= 100_000
            p = float(ber_theory(mod, snr))
            z = abs(ber - p) / np.sqrt(p * (1 - p) / bits)
            worst = max(worst, z)
            lines.append(f"{mod}@{snr:g}dB z={z:.2f}")
    elapsed = time.perf_counter() - t0
    ok = worst <= 3 and elapsed < 120
    report(3, ok, f"max |z| = {worst:.2f} (<= 3) over 16 points, {elapsed:.1f} s (< 120 s)")
    assert ok


# 4 and 5 -------------------------------------------------------------------------


@pytest.fixture(scope="module")
def st_sweep():
    cfg = load_config(CONFIGS / "spacetime16qam.cfg")
    t0 = time.perf_counter()
    with warnings.catch_warnings():
        # the zf arm warns on the occasional near-singular realization
        warnings.simplefilter("ignore", RuntimeWarning)
        res = run_ber_sweep(cfg)
    return cfg, res, time.perf_counter() - t0


def test_c4_epsilon_ordering_and_penalty(report, st_sweep):
    cfg, res, elapsed = st_sweep
    agg = res.aggregate
    eps = [1e-1, 1e-2, 1e-3, 1e-4]
    at16 = [agg[("hogmt", "QAM16", e, 16.0)] for e in eps]
    strict = all(a[2] > b[2] for a, b in zip(at16, at16[1:]))
    separated = all(_separated(a, b) for a, b in zip(at16, at16[1:]) if a[2] > 1e-4 and b[2] > 1e-4)
    snr, ideal = res.curve("ideal", "QAM16")
    _, best = res.curve("hogmt", "QAM16", 1e-4)
    penalty = snr_penalty(snr, ideal, best, floor=1e-4)
    ok = strict and separated and penalty <= 1.5 and elapsed < 1800 and not res.failures
    bers = ", ".join(f"{e:g}:{a[2]:.2e}" for e, a in zip(eps, at16))
    report(
        4,
        ok,
        f"BER@16dB {bers}; strict={strict}, CI-separated={separated}; "
        f"SNR penalty of eps=1e-4 vs ideal = {penalty:.2f} dB (<= 1.5); {cfg.trials} trials, {elapsed:.0f} s (< 1800 s)",
    )
    assert ok


def test_c5_baseline_dominance(report, st_sweep):
    cfg, res, _ = st_sweep
    h = res.aggregate[("hogmt", "QAM16", 1e-4, 20.0)]
    t = res.aggregate[("thp_zf", "QAM16", None, 20.0)]
    z = res.aggregate[("zf", "QAM16", None, 20.0)]
    ratio_ok = h[2] <= 0.1 * t[2]
    sep = _separated(t, h)
    ok = ratio_ok and sep
    report(
        5,
        ok,
        f"BER@20dB hogmt(1e-4) {h[2]:.2e} [{h[3]:.1e}, {h[4]:.1e}] vs thp_zf {t[2]:.2e} [{t[3]:.1e}, {t[4]:.1e}] "
        f"(zf {z[2]:.2e}); <= 0.1x: {ratio_ok}, CI-separated: {sep}",
    )
    assert ok


# 6 -------------------------------------------------------------------------------


def test_c6_spatial_corollary(report):
    cfg = load_config(CONFIGS / "spatial30.cfg")
    res = run_spatial_demo(cfg)
    agg = res.aggregate
    low = [s for s in cfg.snr_db_grid if s <= 4]
    high = [s for s in cfg.snr_db_grid if s > 12]
    # near BER 0.5 both arms saturate, so separation is required somewhere in the low band, not at every point
    pairs = [(agg[("hogmt", "QAM16", 1e-1, s)], agg[("thp_zf", "QAM16", None, s)]) for s in low]
    coarse_worse = all(h[2] > t[2] for h, t in pairs) and any(_separated(h, t) for h, t in pairs)
    fine_better = all(_separated(agg[("thp_zf", "QAM16", None, s)], agg[("hogmt", "QAM16", 1e-2, s)]) for s in high)

    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(100):
        k2 = np.eye(30) + 0.3 * crandn(rng, 30, 30) / np.sqrt(60)
        assert np.linalg.cond(k2) < 10
        s = crandn(rng, 30)
        worst = max(worst, np.linalg.norm(k2 @ precode_spatial(k2, s) - s) / np.linalg.norm(s))
    exact = worst < 1e-10

    ok = coarse_worse and fine_better and exact and not res.failures
    lows = ", ".join(
        f"{s:g}dB {agg[('hogmt', 'QAM16', 1e-1, s)][2]:.3f}/{agg[('thp_zf', 'QAM16', None, s)][2]:.3f}" for s in low
    )
    highs = ", ".join(
        f"{s:g}dB {agg[('hogmt', 'QAM16', 1e-2, s)][2]:.1e}/{agg[('thp_zf', 'QAM16', None, s)][2]:.1e}" for s in high
    )
    report(
        6,
        ok,
        f"eps=1e-1 vs thp (<= 4 dB) {lows}: worse={coarse_worse}; eps=1e-2 vs thp (>12 dB) {highs}: "
        f"better={fine_better}; spatial reconstruction {worst:.1e} (< 1e-10); {cfg.trials} trials",
    )
    assert ok


# 7 -------------------------------------------------------------------------------


def test_c7_statistics_consistency(report):
    t0 = time.perf_counter()
    cfg = load_config(CONFIGS / "two_mode.cfg")
    assert cfg.stats["realizations"] == 1000
    ens, model = build_ensemble(cfg)
    pairing = "decomposition"
    z = {}
    for name, eig, (direct, se) in (
        ("CCF", ccf_from_eigen(model), ccf_direct(ens, return_se=True)),
        ("LSF", lsf_from_eigen(model, pairing), lsf_direct(ens, return_se=True)),
        ("C", global_scattering(model, pairing), global_scattering_direct(ens, return_se=True)),
        ("rho2", tf_path_gain(model, pairing), tf_path_gain_direct(ens, return_se=True)),
        ("E2", np.array(total_gain(model)), total_gain_direct(ens, return_se=True)),
    ):
        scale = max(np.max(np.abs(direct)), 1e-300)
        z[name] = float(np.max(np.abs(eig - direct) / (np.asarray(se) + 1e-12 * scale)))
    ident = max(StatsReport.from_eigen(model, pairing).consistency().values())
    klt = ensemble_klt(ens, max_modes=cfg.stats["max_modes"])
    ident_klt = max(StatsReport.from_eigen(klt, pairing).consistency().values())
    elapsed = time.perf_counter() - t0
    ok = max(z.values()) <= 3 and ident < 1e-9 and ident_klt < 1e-9 and elapsed < 300
    zs = ", ".join(f"{k} {v:.2f}" for k, v in z.items())
    report(
        7,
        ok,
        f"max |eigen-direct|/SE: {zs} (<= 3); identities {ident:.1e} / KLT {ident_klt:.1e} (< 1e-9); "
        f"lam_KLT = {klt.lam[0]:.2f}, {klt.lam[1]:.2f}; {elapsed:.1f} s (< 300 s)",
    )
    assert ok


# 8 -------------------------------------------------------------------------------


def test_c8_transform_round_trips(report):
    rng = np.random.default_rng(8)
    worst = 0.0
    for T in (1, 2, 7, 16, 32):
        for L in (1, 3, 16, 32):
            h = crandn(rng, T, L)
            back = spreading_to_impulse(impulse_to_spreading(h))
            worst = max(worst, np.linalg.norm(back - h) / np.linalg.norm(h))
            if L <= 32:
                S = crandn(rng, L, T)
                F = max(L, 32)
                back = transfer_to_spreading(spreading_to_transfer(S, F), L)
                worst = max(worst, np.linalg.norm(back - S) / np.linalg.norm(S))
    conc = []
    for width in (0.7, 2.0, np.inf):
        H = atomic_kernel(np.ones((12, 12)), width)
        e = np.sum(np.abs(H) ** 2, axis=(0, 1))
        with np.errstate(divide="ignore"):  # flat prototype puts all energy at (0, 0)
            conc.append(e[0, 0] / np.delete(e.ravel(), 0).max())
    lti = all(c > 1 for c in conc)
    ok = worst < 1e-12 and lti
    report(
        8,
        ok,
        f"max round-trip error {worst:.1e} (< 1e-12) up to 32x32; LTI energy at (0,0) / next bin = "
        + ", ".join(f"{c:.3g}" for c in conc),
    )
    assert ok
