"""emogen: emotion-aligned image-to-MIDI generation toolkit.

Subpackages/modules: `midi_io` (SMF parse/write, piano rolls),
`tokenizer` (event vocabulary), `metrics` (music-quality metrics),
`pairing` (VA-based dataset pairing), `nn` (autodiff substrate),
`model` (the CNN/transformer architecture), `training` (objectives and
loops), `cli` (operator commands).
"""

__version__ = "0.1.0"
