"""Ten hand-evaluated metric fixtures.

Ground truth is the straight line x = 1..30, y = 0. Each prediction is the
ground truth plus either a constant offset or a ramp growing linearly to a
final offset, so every error is known in closed form: a constant offset c
gives ADE = FDE = |c|, a ramp to c gives FDE = |c| and ADE = |c| * 31 / 60.
"""

import math

import numpy as np

N = 30
GT = np.column_stack([np.arange(1.0, N + 1), np.zeros(N)])
RAMP = (np.arange(1, N + 1) / N)[:, None]


def const(dx, dy):
    return GT + np.array([dx, dy])


def ramp(dx, dy):
    return GT + RAMP * np.array([dx, dy])


# (name, predictions, probabilities, expected minADE, minFDE, MR, p-minADE, p-minFDE)
FIXTURES = [
    ("single_offset_3_4", [const(3, 4)], [1.0], 5.0, 5.0, 1.0, 5.0, 5.0),
    ("two_modes_second_best", [const(0, 3), const(0, 1)], [0.7, 0.3],
     1.0, 1.0, 0.0, 1.0 - math.log(0.3), 1.0 - math.log(0.3)),
    ("exact", [GT.copy()], [1.0], 0.0, 0.0, 0.0, 0.0, 0.0),
    ("on_threshold_is_hit", [const(2, 0)], [1.0], 2.0, 2.0, 0.0, 2.0, 2.0),
    ("just_over_threshold", [const(0, 2.5)], [1.0], 2.5, 2.5, 1.0, 2.5, 2.5),
    ("ramp", [ramp(0, 6)], [1.0], 3.1, 6.0, 1.0, 3.1, 6.0),
    ("endpoint_tie_first_wins", [const(0, 1), ramp(0, 1), const(0, 5)], [0.2, 0.5, 0.3],
     1.0, 1.0, 0.0, 1.0 - math.log(0.2), 1.0 - math.log(0.2)),
    ("six_uniform", [const(0, 0.5 * k + 0.25) for k in (5, 2, 0, 4, 1, 3)], [1 / 6] * 6,
     0.25, 0.25, 0.0, 0.25 + math.log(6), 0.25 + math.log(6)),
    ("best_by_endpoint_not_average", [ramp(0, 3), const(2.5, 0)], [0.5, 0.5],
     2.5, 2.5, 1.0, 2.5 + math.log(2), 2.5 + math.log(2)),
    ("diagonal", [const(1, 1)], [1.0], math.sqrt(2), math.sqrt(2), 0.0, math.sqrt(2), math.sqrt(2)),
]
