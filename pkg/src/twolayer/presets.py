"""Reference parameter sets for a three-region city network.

They were tuned for a much larger network than the synthetic grids and are
kept as data, not as defaults: gains of this size saturate the control
variables immediately on a desk-scale grid. Gain rows follow the layout
(1->2, 3->2, 2->1, 3->1, external 1, external 2, external 3).
"""
import numpy as np

_KP_MEDIUM = np.array([
    [15, -10, 0], [0, -5, 10], [-15, 10, 0], [0, 5, -10],
    [-20, 0, 0], [0, -20, 0], [0, 0, -20],
], dtype=float)

REFERENCE_MEDIUM = {
    "setpoints": [10000.0, 12000.0, 6800.0],
    "kp": _KP_MEDIUM,
    "ki": _KP_MEDIUM * 10,
    "start_factor": 1.0,
    "stop_factor": 0.85,
    "weights": (0.6, -1.8, -1.0),
}

REFERENCE_HIGH = {
    "setpoints": [4500.0, 9200.0, 8000.0],
    "kp": np.array([
        [18.5, -2.1, 0], [0, -3.3, 6.8], [-13.3, 5.6, 0], [0, 4.6, -3.5],
        [-16.4, 0, 0], [0, -9.8, 0], [0, 0, -10.5],
    ]),
    "ki": np.array([
        [18, -69, 0], [0, -69, 62], [-44, 24, 0], [0, 1, -40],
        [-54, 0, 0], [0, -30, 0], [0, 0, -51],
    ], dtype=float),
    "start_factor": 0.99,
    "stop_factor": 0.93,
    "weights": (-0.72, -0.4, -0.2),
}
