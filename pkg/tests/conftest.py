import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


OVERFIT_CONFIG = dict(epochs=200, warmup_epochs=40, initial_lr=3e-3, batch_segments=1)


@pytest.fixture(scope="session")
def overfit_run():
    """Desk-scale model trained on a single synthetic case (shared, ~1-2 min)."""
    import time

    from lambdaunet import synth, training, unet

    case = synth.generate_case(synth.GenParams(seed=0), 0)
    model = unet.build(unet.UNetConfig(), seed=0)
    start = time.perf_counter()
    result = training.fit(model, [case], [case], training.TrainConfig(**OVERFIT_CONFIG),
                          echo=None)
    result.case = case
    result.seconds = time.perf_counter() - start
    return result


ACCEPTANCE: list[tuple[int, bool, str]] = []


@pytest.fixture
def record():
    """Record one acceptance verdict; printed in the terminal summary."""
    def add(criterion: int, passed: bool, detail: str):
        ACCEPTANCE.append((criterion, bool(passed), detail))
    return add


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, passed, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(
            f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}")
