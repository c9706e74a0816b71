"""Acceptance bookkeeping plus the expensive trained-model fixtures shared across the session."""
import time

import pytest

from handrecon.codec import CodecConfig, encode, train_codec
from handrecon.encoder import EncoderConfig, train_encoder
from handrecon.synth import generate_scene
from handrecon.synth.scene import scene_tsdfs

TRAIN_SEEDS = range(1000, 1256)       # 256 synthetic scenes
HELD_OUT_SHAPES = range(2000, 2032)   # codec round-trip evaluation
HELD_OUT_SCENES = range(5000, 5100)   # stereo versus single view

_outcomes: dict[str, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion reported in the summary")
    config.addinivalue_line("markers", "slow: trains desk-scale models or runs hundreds of episodes")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    report = (yield).get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    # setup time counts too: that is where the shared models get trained
    entry = _outcomes.setdefault(marker.args[0], {"ok": True, "seconds": 0.0, "reason": ""})
    entry["seconds"] += report.duration
    if report.failed:
        entry["ok"] = False
        entry["reason"] = call.excinfo.exconly().splitlines()[0][:160] if call.excinfo else report.when


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for name, e in _outcomes.items():
        line = f"{'PASS' if e['ok'] else 'FAIL'}  {name}  ({e['seconds']:.1f} s)"
        terminalreporter.write_line(line + (f"  {e['reason']}" if e["reason"] else ""))


class Timed:
    def __init__(self, value, seconds):
        self.value, self.seconds = value, seconds


@pytest.fixture(scope="session")
def train_shapes():
    return [scene_tsdfs(s) for s in TRAIN_SEEDS]


@pytest.fixture(scope="session")
def trained_codecs(train_shapes):
    """Both desk-scale codecs at the default configuration, with wall-clock training time."""
    start = time.perf_counter()
    models = {role: train_codec([pair[k] for pair in train_shapes], CodecConfig(), role=role)
              for k, role in enumerate(("hand", "object"))}
    return Timed(models, time.perf_counter() - start)


@pytest.fixture(scope="session")
def trained_encoder(trained_codecs):
    codecs = trained_codecs.value
    start = time.perf_counter()
    data = []
    for seed in TRAIN_SEEDS:
        scene = generate_scene(seed)
        th = encode(codecs["hand"], scene.gt_tsdf_hand)[1]
        to = encode(codecs["object"], scene.gt_tsdf_object)[1]
        data.extend((obs, th, to) for obs in scene.observations)
    model = train_encoder(data, codecs, EncoderConfig())
    return Timed((model, data), time.perf_counter() - start)
