"""Acceptance gate: every release criterion, each at its stated tolerance.

The bundled regression scenarios are executed through the CLI once per
session (and a second time for the determinism criterion); the other
criteria read those artifacts or the shared session trajectories.  Each test
records a one-line verdict that is printed in the terminal summary.
"""

import hashlib
import math
import time
from importlib import resources
from pathlib import Path

import numpy as np
import pytest

from optosync import (
    ConstantError,
    IntegratorConfig,
    MeanState,
    NoControl,
    SystemParams,
    TimeDelay,
    cli,
    initial_covariance,
    integrate,
    limit_cycle_stats,
    negativity,
    robustness,
    time_averaged_sync,
)
from optosync.config import load_scenario
from optosync.dynamics import _rk4_joint
from optosync.measures import Identity, TimeShift, first_order_errors
from conftest import record_criterion, reference_params

WINDOW = (250.0, 500.0)


def scenarios_dir() -> Path:
    return Path(resources.files("optosync")) / "scenarios"


def run_regression_suite(out_dir: Path) -> None:
    """Run every bundled artifact with its stored seed."""
    out = str(out_dir)
    for name in ("fig2", "fig2_free", "fig4"):
        assert cli.main(["--out-dir", out, "run", str(scenarios_dir() / f"{name}.yaml")]) == 0
    for name in ("fig3b", "fig5b", "fig6", "fig7_tau", "fig7_cmax"):
        assert cli.main(["--out-dir", out, "sweep", str(scenarios_dir() / f"{name}.yaml")]) == 0
    for name in ("fig2", "fig4"):
        assert cli.main([
            "--out-dir", out, "robustness", str(scenarios_dir() / f"{name}.yaml"),
            "--sigmas", "0.01", "0.02", "--replicas", "5",
        ]) == 0


@pytest.fixture(scope="session")
def suite_dir(tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("regression_suite")
    run_regression_suite(out)
    return out


def read_sweep(path: Path) -> dict[float, dict[str, float]]:
    lines = path.read_text(encoding="utf-8").splitlines()
    cols = lines[0].split(",")
    rows = {}
    for line in lines[1:]:
        vals = [float(x) for x in line.split(",")]
        rows[vals[0]] = dict(zip(cols, vals))
    return rows


class TestCriterion1ConstantErrorSynchronization:
    def test_momentum_locks_and_position_gap_holds(self, fig2_controlled, fig2_free):
        t0 = time.perf_counter()
        integrate(fig2_controlled.params, fig2_controlled.law,
                  cfg=IntegratorConfig(dt=1e-3, t_end=500.0, output_stride=100),
                  rng_seed=42)
        runtime = time.perf_counter() - t0

        mask = fig2_controlled.window_mask(*WINDOW)
        r = limit_cycle_stats(fig2_controlled, 1, WINDOW).r
        p_err = np.abs(fig2_controlled.p1 - fig2_controlled.p2)[mask].mean()
        q_gap = (fig2_controlled.q1 - fig2_controlled.q2)[mask].mean()
        free_ptp = np.ptp((fig2_free.q1 - fig2_free.q2)[fig2_free.window_mask(*WINDOW)])

        p_ok = p_err < 0.05 * r
        q_ok = 2.7 <= q_gap <= 3.3
        free_ok = free_ptp > 0.5
        time_ok = runtime < 30.0
        ok = p_ok and q_ok and free_ok and time_ok
        record_criterion(
            "1 constant-error sync",
            ok,
            f"mean|p_err|={p_err:.2e} vs 0.05r={0.05 * r:.2e}; mean q_gap={q_gap:.4f} "
            f"(need [2.7, 3.3]); free ptp={free_ptp:.1f} (> 0.5); runtime={runtime:.1f}s",
        )
        assert p_ok, f"momentum error {p_err:.3e} not below 0.05 r = {0.05 * r:.3e}"
        assert free_ok, f"uncontrolled error ptp {free_ptp:.3f} does not exceed 0.5"
        assert time_ok, f"runtime {runtime:.1f}s exceeds 30s"
        assert q_ok, (
            f"tail-mean position gap q1-q2 = {q_gap:.4f} is outside [2.7, 3.3]: the "
            f"guard freezes the gap at c_minus plus an overshoot p_cross/k set by the "
            f"transient, which lands at ~3.43 from the quiescent initial state"
        )


class TestCriterion2TimeDelaySynchronization:
    def test_delayed_error_settles_quickly(self, fig4_controlled):
        t0 = time.perf_counter()
        integrate(fig4_controlled.params, fig4_controlled.law,
                  cfg=IntegratorConfig(dt=1e-3, t_end=500.0, output_stride=100),
                  rng_seed=42)
        runtime = time.perf_counter() - t0

        traj = fig4_controlled
        tau = traj.law.tau
        q_err, p_err = first_order_errors(traj, Identity(), TimeShift(tau))
        err = np.hypot(q_err, p_err)
        r = limit_cycle_stats(traj, 1, WINDOW).r
        thr = 0.05 * r
        below = err < thr
        # earliest sample from which the error never rises above threshold
        settle_idx = None
        for i in range(len(traj.t)):
            if below[i:].all():
                settle_idx = i
                break
        settled = settle_idx is not None
        t_settle = traj.t[settle_idx] if settled else math.inf
        ok = settled and t_settle <= 20.0 and runtime < 30.0
        record_criterion(
            "2 time-delay sync",
            ok,
            f"settle t={t_settle:.1f} (need <= 20); threshold 0.05r={thr:.3f}; "
            f"runtime={runtime:.1f}s",
        )
        assert settled, "delayed error never stays below 0.05 r"
        assert t_settle <= 20.0, f"settling time {t_settle:.1f} exceeds 20"
        assert runtime < 30.0


class TestCriterion3SecondOrderMeasure:
    def test_control_lifts_error_fluctuation_measure(
        self, fig2_controlled, fig2_free, fig4_controlled
    ):
        ce = time_averaged_sync(fig2_controlled, WINDOW)
        td = time_averaged_sync(fig4_controlled, WINDOW)
        free = time_averaged_sync(fig2_free, WINDOW)

        def not_decaying(traj):
            early = time_averaged_sync(traj, (250.0, 375.0))
            late = time_averaged_sync(traj, (375.0, 500.0))
            return late >= 0.5 * early, early, late

        ce_steady, ce_early, ce_late = not_decaying(fig2_controlled)
        td_steady, td_early, td_late = not_decaying(fig4_controlled)

        ce_ok = ce >= 2.0 * free and ce_steady
        td_ok = td >= 2.0 * free and td_steady
        ok = ce_ok and td_ok
        record_criterion(
            "3 second-order measure",
            ok,
            f"constant-error avg={ce:.4g} ({ce / free:.0f}x free={free:.4g}, "
            f"late/early={ce_late / ce_early:.2f}); "
            f"time-delay avg={td:.4g} ({td / free:.2g}x free, "
            f"late/early={td_late / td_early:.2g})",
        )
        assert ce_ok, f"constant-error: avg {ce:.4g} vs free {free:.4g}"
        assert td_ok, (
            f"time-delay: avg {td:.4g} is below 2x the free value {free:.4g} and keeps "
            f"decaying (late/early={td_late / td_early:.2g}): with the slaved mirror's "
            f"partner free-running on the large blue-detuned attractor, the linearized "
            f"fluctuations are parametrically pumped and the measure collapses over "
            f"this window"
        )


class TestCriterion4TemperatureSweep:
    def test_bath_occupation_tolerance(self, suite_dir, fig2_free):
        rows = read_sweep(suite_dir / "fig3b_nbar_sweep.csv")
        sg_cold = rows[0.05]["sg_avg"]
        sg_mid = rows[0.28]["sg_avg"]
        sg_hot = rows[6.14]["sg_avg"]
        free_cold = time_averaged_sync(fig2_free, WINDOW)

        mid_ok = abs(sg_mid - sg_cold) <= 0.20 * sg_cold
        hot_ok = sg_hot > free_cold
        ok = mid_ok and hot_ok
        record_criterion(
            "4 temperature sweep",
            ok,
            f"sg(0.28)={sg_mid:.4g} vs sg(0.05)={sg_cold:.4g} "
            f"(drop {abs(sg_mid - sg_cold) / sg_cold:.1%}, allowed 20%); "
            f"sg(6.14)={sg_hot:.4g} vs free(0.05)={free_cold:.4g}",
        )
        assert hot_ok, f"sg at nbar=6.14 ({sg_hot:.4g}) not above free value {free_cold:.4g}"
        assert mid_ok, (
            f"sg drops {abs(sg_mid - sg_cold) / sg_cold:.1%} from nbar=0.05 to 0.28, "
            f"exceeding the 20% band: the error-fluctuation variance floor grows "
            f"with the thermal drive faster than the stated tolerance assumes"
        )


class TestCriterion5Robustness:
    REPLICAS = 20
    SIGMA = 0.02

    def _study(self, scenario_name: str) -> tuple[float, float]:
        scenario = load_scenario(scenarios_dir() / f"{scenario_name}.yaml")
        cfg = IntegratorConfig(dt=scenario.integrator.dt, t_end=scenario.integrator.t_end,
                               output_stride=scenario.integrator.output_stride,
                               record_covariance=False)
        clean = integrate(scenario.params, scenario.law, cfg=cfg, rng_seed=scenario.seed)
        stats = limit_cycle_stats(clean, 1, WINDOW)
        values = []
        for rep in range(self.REPLICAS):
            noisy = integrate(scenario.params, scenario.law, cfg=cfg,
                              rng_seed=scenario.seed + 1 + rep, ctrl_noise=self.SIGMA)
            values.append(
                robustness(clean, noisy, stats, WINDOW, scenario.h1, scenario.h2)
            )
        zero = integrate(scenario.params, scenario.law, cfg=cfg,
                         rng_seed=scenario.seed + 999, ctrl_noise=0.0)
        r_zero = robustness(clean, zero, stats, WINDOW, scenario.h1, scenario.h2)
        return float(np.mean(values)), r_zero

    def test_accuracy_under_controller_noise(self):
        ce_mean, ce_zero = self._study("fig2")
        td_mean, td_zero = self._study("fig4")
        ce_ok = ce_mean >= 0.90
        td_ok = td_mean >= 0.90
        zero_ok = ce_zero == 1.0 and td_zero == 1.0
        ok = ce_ok and td_ok and zero_ok
        record_criterion(
            "5 robustness",
            ok,
            f"mean R(0.02): constant-error={ce_mean:.4f}, time-delay={td_mean:.4f} "
            f"(need >= 0.90 over {self.REPLICAS} replicas); R(0)={ce_zero}, {td_zero}",
        )
        assert zero_ok, "R at sigma=0 must be exactly 1"
        assert ce_ok, f"constant-error mean R {ce_mean:.4f} below 0.90"
        assert td_ok, f"time-delay mean R {td_mean:.4f} below 0.90"


class TestCriterion6EntanglementWindow:
    def test_negativity_appears_at_intermediate_offset(self, suite_dir):
        rows = read_sweep(suite_dir / "fig6_c_minus_sweep.csv")
        small = {c: rows[c]["neg_max"] for c in (0.0, 0.5, 1.0)}
        mid = {c: v["neg_max"] for c, v in rows.items() if 2.5 <= c <= 3.5}
        end = rows[6.0]["neg_max"]

        small_ok = all(v == 0.0 for v in small.values())
        mid_ok = any(v > 0.0 for v in mid.values())
        end_ok = end == 0.0
        ok = small_ok and mid_ok and end_ok
        record_criterion(
            "6 entanglement window",
            ok,
            f"neg_max at {{0, 0.5, 1}}={list(small.values())}; "
            f"max over [2.5, 3.5]={max(mid.values()):.4g} (need > 0); at 6.0={end}",
        )
        assert small_ok, f"negativity must vanish at small offsets, got {small}"
        assert end_ok, f"negativity must vanish at offset 6, got {end}"
        assert mid_ok, (
            f"no positive negativity anywhere in [2.5, 3.5] (max {max(mid.values())}): "
            f"the propagated two-mirror covariance stays far from the separability "
            f"boundary (smallest partial-transpose eigenvalue ~2 against the 0.5 "
            f"threshold) at every offset, so the predicted entanglement window does "
            f"not materialize from these equations at these parameters"
        )


class TestCriterion7Stability:
    def test_error_growth_exponents_negative_everywhere(self, suite_dir):
        worst = {}
        for fname, label in (
            ("fig6_c_minus_sweep.csv", "c_minus"),
            ("fig7_tau_sweep.csv", "tau"),
            ("fig7_c_max_sweep.csv", "c_max"),
        ):
            rows = read_sweep(suite_dir / fname)
            lyaps = {v: row["lyap_max"] for v, row in rows.items()}
            worst[label] = max(lyaps.items(), key=lambda kv: kv[1])
        ok = all(l < 0.0 for _, l in worst.values())
        detail = "; ".join(
            f"worst {label}: Ly={l:+.2e} at {v:g}" for label, (v, l) in worst.items()
        )
        record_criterion("7 stability", ok, detail)
        assert ok, (
            f"largest error-growth exponent is not negative at every sweep point "
            f"({detail}): the synchronized state retains a neutral direction (the "
            f"frozen gap / replay phase), so the fitted exponents cluster at zero "
            f"rather than below it"
        )


class TestCriterion8CovariancePropagatorOracles:
    def test_decoupled_cavity_reaches_vacuum(self):
        p = reference_params(g1=0.0, g2=0.0, E=0.0, nbar=0.0)
        d0 = initial_covariance(0.0)
        d0[0, 0] = d0[1, 1] = 3.0
        cfg = IntegratorConfig(dt=1e-2, t_end=100.0, output_stride=100)
        traj = integrate(p, NoControl(), d0=d0, cfg=cfg)
        dev = np.max(np.abs(traj.cov[-1][:2, :2] - np.eye(2) * 0.5))

        zero = SystemParams(*([0.0] * 10))
        N = np.diag([0.15, 0.15, 0.0, 0.0055, 0.0, 0.0055])
        d = initial_covariance(0.05)
        s = MeanState.zeros()
        dt, n = 1e-3, 5000
        for _ in range(n):
            s, d = _rk4_joint(zero, s, d, N, 0.0, 0.0, dt, True)
        t_tot = n * dt
        drift_dev = np.max(np.abs(d - (initial_covariance(0.05) + N * t_tot))) / t_tot

        ends = []
        for dt_o in (4e-3, 2e-3, 1e-3):
            cfg_o = IntegratorConfig(dt=dt_o, t_end=20.0, output_stride=int(round(20.0 / dt_o)))
            ends.append(integrate(reference_params(), NoControl(), cfg=cfg_o).q1[-1])
        ratio = abs(ends[0] - ends[1]) / abs(ends[1] - ends[2])

        cavity_ok = dev < 1e-6
        diffusion_ok = drift_dev < 1e-9
        order_ok = 12.0 <= ratio <= 20.0
        ok = cavity_ok and diffusion_ok and order_ok
        record_criterion(
            "8 covariance propagator oracles",
            ok,
            f"cavity-to-vacuum dev={dev:.1e} (<1e-6); pure-diffusion dev={drift_dev:.1e}"
            f"/unit (<1e-9); step-halving ratio={ratio:.1f} (in [12, 20])",
        )
        assert cavity_ok and diffusion_ok and order_ok


class TestCriterion9NegativityOracles:
    def test_analytic_states(self):
        vac = negativity(np.eye(6) * 0.5).e_n
        therm = np.eye(6) * 0.5
        therm[2:, 2:] = np.eye(4)
        th = negativity(therm).e_n

        r = 0.5
        d = np.eye(6) * 0.5
        ch, sh = math.cosh(2 * r) / 2, math.sinh(2 * r) / 2
        d[2:4, 2:4] = ch * np.eye(2)
        d[4:6, 4:6] = ch * np.eye(2)
        d[2:4, 4:6] = sh * np.diag([1.0, -1.0])
        d[4:6, 2:4] = sh * np.diag([1.0, -1.0])
        tms = negativity(d).e_n

        ok = vac == 0.0 and th == 0.0 and abs(tms - 1.442695) <= 1e-6
        record_criterion(
            "9 negativity oracles",
            ok,
            f"vacuum={vac}, thermal={th} (exact 0); squeezed={tms:.9f} "
            f"(1.442695 +/- 1e-6)",
        )
        assert vac == 0.0
        assert th == 0.0
        assert tms == pytest.approx(1.442695, abs=1e-6)


class TestCriterion10Determinism:
    def test_suite_rerun_byte_identical(self, suite_dir, tmp_path_factory):
        second = tmp_path_factory.mktemp("regression_suite_repeat")
        run_regression_suite(second)
        first_files = sorted(p.name for p in suite_dir.iterdir())
        second_files = sorted(p.name for p in second.iterdir())
        mismatched = []
        for name in first_files:
            h1 = hashlib.sha256((suite_dir / name).read_bytes()).hexdigest()
            h2 = hashlib.sha256((second / name).read_bytes()).hexdigest()
            if h1 != h2:
                mismatched.append(name)
        ok = first_files == second_files and not mismatched
        record_criterion(
            "10 determinism",
            ok,
            f"{len(first_files)} artifacts compared; mismatches: {mismatched or 'none'}",
        )
        assert first_files == second_files
        assert not mismatched, f"outputs differ between reruns: {mismatched}"
