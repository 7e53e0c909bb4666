import pytest

from optosync import ConstantError, IntegratorConfig, NoControl, SystemParams, TimeDelay, integrate

ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


def record_criterion(name: str, ok: bool, detail: str) -> bool:
    """Collect one acceptance-criterion verdict for the end-of-run report."""
    ACCEPTANCE_RESULTS.append((name, ok, detail))
    return ok


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_RESULTS:
        status = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"criterion {name}: {status} [{detail}]")


def reference_params(**overrides) -> SystemParams:
    """The bundled scenario's plant: blue-detuned drive, slightly detuned
    mirrors, asymmetric couplings, weakly damped."""
    base = dict(
        delta=1.0, omega_m1=1.0, omega_m2=1.005, g1=0.008, g2=0.005,
        E=10.0, kappa=0.15, gamma1=0.005, gamma2=0.005, nbar=0.05,
    )
    base.update(overrides)
    return SystemParams(**base)


@pytest.fixture(scope="session")
def fig2_params() -> SystemParams:
    return reference_params()


@pytest.fixture(scope="session")
def fig2_controlled(fig2_params):
    cfg = IntegratorConfig(dt=1e-3, t_end=500.0, output_stride=100)
    return integrate(fig2_params, ConstantError(k=2.0, c_minus=3.0), cfg=cfg, rng_seed=42)


@pytest.fixture(scope="session")
def fig2_free(fig2_params):
    cfg = IntegratorConfig(dt=1e-3, t_end=500.0, output_stride=100)
    return integrate(fig2_params, NoControl(), cfg=cfg, rng_seed=42)


@pytest.fixture(scope="session")
def fig4_controlled(fig2_params):
    cfg = IntegratorConfig(dt=1e-3, t_end=500.0, output_stride=100)
    return integrate(fig2_params, TimeDelay(k=2.0, tau=5.0, c_max=1.0), cfg=cfg, rng_seed=42)
