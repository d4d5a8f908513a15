"""Music performance analysis: alignment, misalignment, melody, dispersion, note separation and evaluation."""
from .core import DataError, NoteEvent, NoteList, PianoRoll, WarpingPath, notes_to_pianoroll, stretch_to_duration

__all__ = ["DataError", "NoteEvent", "NoteList", "PianoRoll", "WarpingPath", "notes_to_pianoroll",
           "stretch_to_duration"]
__version__ = "0.1.0"
