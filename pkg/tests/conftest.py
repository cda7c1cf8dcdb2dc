import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def phantom_records(n_images=8, size=160, seed=0, images_per_case=1):
    """Preprocessed phantom records with one cluster per abnormal image."""
    from calc_cade.phantom import PhantomDatasetSpec, PhantomSpec, generate_phantom_dataset
    from calc_cade.preprocess import preprocess

    spec = PhantomDatasetSpec(
        n_images=n_images,
        images_per_case=images_per_case,
        normal_case_fraction=0.0,
        image=PhantomSpec(image_size=size, mc_per_cluster_range=(4, 6)),
        seed=seed,
    )
    return [(preprocess(im)[0], a) for im, a in generate_phantom_dataset(spec)]


@pytest.fixture(scope="session")
def small_cascade():
    """A cascade trained on small phantoms, with its validation records."""
    from calc_cade.boosting import train_cascade

    recs = phantom_records(12, 160, seed=21)
    train, val = recs[:8], recs[8:]
    model = train_cascade(train, val, (2, 3, 5, 12), neg_pool_size=20_000, seed=0)
    return model, train, val


# ---------------------------------------------------------------- acceptance summary

_criteria: dict = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.rsplit("::", 1)[-1]
    if "test_acceptance.py" not in report.nodeid or not name.startswith("test_criterion_"):
        return
    if report.when == "call" or report.failed or report.skipped:
        outcome = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
        detail = dict(report.user_properties).get("detail", "")
        if name not in _criteria or outcome != "PASS":
            _criteria[name] = (outcome, detail)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_criteria, key=lambda n: int(n.split("_")[2])):
        outcome, detail = _criteria[name]
        label = name[len("test_criterion_"):].replace("_", " ", 1).replace("_", "-")
        terminalreporter.write_line(f"{outcome}  criterion {label}" + (f": {detail}" if detail else ""))
