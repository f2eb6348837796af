import os
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from heteraug.core import derive_rng


def _natural_crops():
    """20 fixed 96x96 crops from the photographs bundled with scikit-image."""
    skdata = pytest.importorskip("skimage.data")
    root = Path(os.path.dirname(skdata.__file__))
    names = ["astronaut.png", "coffee.png", "chelsea.png", "rocket.jpg", "motorcycle_left.png",
             "motorcycle_right.png", "hubble_deep_field.jpg", "retina.jpg", "ihc.png", "color.png"]
    crops = []
    for name in names:
        with Image.open(root / name) as im:
            im = im.convert("RGB")
            w, h = im.size
            m = min(w, h)
            for box in ((0, 0, m, m), (w - m, h - m, w, h)):
                crop = im.crop(box).resize((96, 96), Image.Resampling.BOX)
                crops.append(np.asarray(crop, dtype=np.float64) / 255.0)
    return crops


@pytest.fixture(scope="session")
def natural_images():
    return _natural_crops()


@pytest.fixture
def rng():
    return derive_rng(1234, ["tests"])


def random_image(rng, h=32, w=32):
    return rng.random((h, w, 3))


@pytest.fixture(scope="session")
def toy_results():
    """The 4 modes x 5 seeds experiment on the synthetic task (~15 min)."""
    import toy_experiment
    return toy_experiment.run(log=None)


# --- acceptance reporting ----------------------------------------------------

_ACCEPTANCE = {}


@pytest.fixture
def detail(request):
    """Attach a measured-values note to the acceptance line of this test."""
    def note(text):
        request.node.user_properties.append(("detail", text))
    return note


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or rep.skipped:
        return
    if rep.when == "call" or rep.failed:
        notes = [v for k, v in item.user_properties if k == "detail"]
        if rep.failed and not notes:
            notes = [str(rep.longrepr).strip().splitlines()[-1]]
        _ACCEPTANCE[mark.args[0]] = (mark.args[1], rep.passed, "; ".join(notes))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        title, ok, note = _ACCEPTANCE[n]
        line = f"ACCEPTANCE {n} {'PASS' if ok else 'FAIL'}: {title}"
        terminalreporter.write_line(f"{line} ({note})" if note else line)
