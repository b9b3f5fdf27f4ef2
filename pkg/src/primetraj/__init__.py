"""Two-stage trajectory prediction: Frenet-frame trajectory generation on
searched lane paths, followed by a learned attention-based evaluator."""

__version__ = "0.1.0"
