import numpy as np
import pytest

from egoheight.dataset import make_cohort, render_synthetic, write_frames, write_manifest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_cohort(tmp_path_factory):
    """2 persons x 3 mounts x 2 backgrounds, 5 s at 30 fps (one clip per video)."""
    root = tmp_path_factory.mktemp("tiny_cohort")
    metas = []
    for it in make_cohort(n_persons=2, seed=3, duration_s=5.0, fps=30.0):
        frames, meta = render_synthetic(it.cfg, it.video_id, it.person_id, it.mount)
        write_frames(frames, meta, root)
        metas.append(meta)
    write_manifest(root / "manifest.tsv", metas)
    return root / "manifest.tsv"


@pytest.fixture(scope="session")
def tiny_bank(tiny_cohort):
    from egoheight.dataset import load_manifest
    from egoheight.evaluation import load_clips

    return load_clips(load_manifest(tiny_cohort))


# -- acceptance reporting ------------------------------------------------------

_CRITERIA: dict[int, tuple[str, bool, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or not (rep.when == "call" or rep.failed):
        return
    number, title = marker.args
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    if rep.failed and not detail:
        detail = rep.longrepr.reprcrash.message if hasattr(rep.longrepr, "reprcrash") else "error"
    _CRITERIA[number] = (title, rep.passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, ok, detail = _CRITERIA[number]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} [{number}] {title}: {detail}")
