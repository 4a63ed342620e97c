import numpy as np
import pytest

from emogen.midi_io import MidiPiece, NoteEvent


def random_canonical_piece(rng: np.random.Generator, max_notes: int = 12,
                           ticks_per_beat: int = 480) -> MidiPiece:
    """Random piece with no same-pitch overlap and no duplicate (onset, pitch)."""
    n = int(rng.integers(0, max_notes + 1))
    per_pitch_cursor: dict[int, int] = {}
    notes = []
    for _ in range(n):
        pitch = int(rng.integers(21, 109))
        onset = per_pitch_cursor.get(pitch, 0) + int(rng.integers(0, 960))
        duration = int(rng.integers(1, 960))
        notes.append(NoteEvent(onset=onset, pitch=pitch, duration=duration,
                               velocity=int(rng.integers(1, 128))))
        per_pitch_cursor[pitch] = onset + duration
    return MidiPiece(ticks_per_beat=ticks_per_beat, notes=tuple(notes))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# One line per acceptance criterion, printed after the test run.
ACCEPTANCE_RESULTS: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(line)
