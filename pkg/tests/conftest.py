import numpy as np
import pytest

from segpool.audio_io import AudioClip
from segpool.harness.synth import SynthSpec, generate_synthetic_corpus


def tone(seconds: float, freq: float = 300.0, amplitude: float = 0.99, rate: int = 16000, phase: float = 0.0):
    t = np.arange(int(round(seconds * rate))) / rate
    return amplitude * np.sin(2 * np.pi * freq * t + phase)


def clip_of(samples, rate: int = 16000, id: str = "u") -> AudioClip:
    return AudioClip(np.asarray(samples, dtype=np.float32), rate, id)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """Three speakers, eight utterances each."""
    out = tmp_path_factory.mktemp("corpus")
    records = generate_synthetic_corpus(SynthSpec(n_speakers=3, utterances_per_speaker=8), seed=11, out_dir=out)
    return out, records


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
