"""Multi-device sensor pipeline: record, synchronize, window, train, infer.

Subpackages map to pipeline stages: `logfmt` (binary sensor logs),
`synthgen` (synthetic sessions with ground truth), `syncer` (sample-level
alignment), `dataset` (windowed training pairs and exports), `model`
(LSTM training and allocation-free inference), `rtengine` (the real-time
runtime), `schedsim` (scheduling simulator), and `cli`.
"""

__version__ = "0.1.0"
