import copy

import pytest

from trajguide.config import validate_dict

SMALL_RAW = {
    "seed": 3,
    "sampler": {"steps": 8, "frames": 6},
    "schedule": {"spatial_steps": 2, "temporal_steps": 2, "composite_steps": 3},
    "subjects": [
        {
            "keyframes": {
                "0": {"bbox": [0.0, 0.25, 0.5, 0.75], "prompt": "a cat walking on grass"},
                "last": {"bbox": [0.5, 0.25, 1.0, 0.75], "prompt": "a cat walking on grass"},
            },
            "subject_indices": [2],
            "trailing": 10,
        }
    ],
}

TWO_SUBJECT_RAW = {
    "seed": 5,
    "sampler": {"steps": 8, "frames": 6},
    "schedule": {"spatial_steps": 2, "temporal_steps": 2, "composite_steps": 3},
    "subjects": [
        {
            "keyframes": {
                "0": {"bbox": [0.0, 0.0, 0.375, 0.375], "prompt": "a white cat"},
                "last": {"bbox": [0.0, 0.5, 0.375, 0.875], "prompt": "a white cat"},
            },
            "subject_indices": [3],
        },
        {
            "keyframes": {
                "0": {"bbox": [0.625, 0.0, 1.0, 0.375], "prompt": "a yellow dog"},
                "last": {"bbox": [0.625, 0.5, 1.0, 0.875], "prompt": "a yellow dog"},
            },
            "subject_indices": [3],
        },
    ],
    "composed_prompt": "a white cat and a yellow dog running on the moon",
}


@pytest.fixture
def small_raw():
    return copy.deepcopy(SMALL_RAW)


@pytest.fixture
def small_cfg():
    return validate_dict(copy.deepcopy(SMALL_RAW))


@pytest.fixture
def two_subject_raw():
    return copy.deepcopy(TWO_SUBJECT_RAW)


# acceptance reporting: one line per criterion in the terminal summary
_ACCEPTANCE: dict[str, list] = {}


@pytest.fixture
def criterion(request):
    name = request.node.get_closest_marker("criterion").args[0]
    _ACCEPTANCE.setdefault(name, [])
    yield name


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is not None and rep.when == "call":
        _ACCEPTANCE.setdefault(marker.args[0], []).append(rep.passed)
    elif marker is not None and rep.when == "setup" and rep.failed:
        _ACCEPTANCE.setdefault(marker.args[0], []).append(False)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_ACCEPTANCE, key=lambda n: int(n.split(".")[0])):
        results = _ACCEPTANCE[name]
        status = "PASS" if results and all(results) else "FAIL"
        terminalreporter.write_line(f"{status}  {name}")


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion this test checks")
