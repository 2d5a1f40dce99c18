"""Published true subgroup AHRs of the six simulation scenarios (two decimals).

Used as a fixture for the heterogeneity rule and as a sanity reference for
the oracle.  ``HETEROGENEOUS`` lists the subgroups marked as heterogeneous in
the published table.
"""
from __future__ import annotations

import numpy as np

LABELS = (
    "x1=a", "x1=b", "x2=a", "x2=b", "x3=a", "x3=b", "x4=a", "x4=b", "x4=c",
    "x5=a", "x5=b", "x5=c", "x5=d", "x6=a", "x6=b", "x7=a", "x7=b",
    "x8=a", "x8=b", "x8=c", "x9=a", "x9=b", "x10=a", "x10=b", "x10=c",
)

OVERALL = {1: 0.66, 2: 0.68, 3: 0.98, 4: 0.88, 5: 0.83, 6: 0.65}

_S1 = [0.67, 0.66, 0.66, 0.66, 0.66, 0.66, 0.66, 0.66, 0.66, 0.67, 0.67, 0.66, 0.66,
       0.67, 0.66, 0.66, 0.66, 0.67, 0.66, 0.66, 0.66, 0.66, 0.66, 0.67, 0.66]
_S2 = [0.68, 0.68, 0.68, 0.68, 0.68, 0.68, 1.00, 0.53, 0.53, 0.68, 0.68, 0.68, 0.68,
       0.68, 0.67, 0.68, 0.68, 0.68, 0.68, 0.68, 0.68, 0.68, 0.68, 0.68, 0.68]
_S3 = [0.98, 0.98, 0.98, 0.98, 0.98, 0.98, 0.50, 1.25, 1.24, 0.98, 0.98, 0.98, 0.98,
       0.98, 0.98, 0.98, 0.98, 0.98, 0.98, 0.98, 0.98, 0.98, 0.98, 0.98, 0.98]
_S4 = [0.74, 1.03, 0.79, 0.95, 1.17, 0.82, 0.88, 0.86, 0.90, 0.96, 1.12, 0.84, 0.80,
       0.95, 0.85, 0.91, 0.86, 0.70, 0.99, 0.89, 0.88, 0.88, 0.96, 0.85, 0.87]
_S5 = [0.58, 1.10, 0.65, 0.95, 1.38, 0.70, 0.82, 0.78, 0.87, 0.97, 1.30, 0.74, 0.68,
       0.96, 0.76, 0.89, 0.79, 0.52, 1.01, 0.84, 0.84, 0.82, 0.96, 0.77, 0.80]
_S6 = [0.76, 0.55, 0.64, 0.66, 0.65, 0.65, 0.65, 0.65, 0.65, 0.65, 0.65, 0.65, 0.65,
       0.65, 0.65, 0.66, 0.65, 0.66, 0.65, 0.65, 0.65, 0.65, 0.65, 0.65, 0.65]

REFERENCE_TRUE_AHR = {1: _S1, 2: _S2, 3: _S3, 4: _S4, 5: _S5, 6: _S6}

HETEROGENEOUS = {
    1: (),
    2: ("x4=a", "x4=b", "x4=c"),
    3: ("x4=a", "x4=b", "x4=c"),
    4: ("x1=a", "x1=b", "x2=a", "x3=a", "x5=b", "x8=a", "x8=b"),
    5: ("x1=a", "x1=b", "x2=a", "x2=b", "x3=a", "x3=b", "x5=a", "x5=b", "x5=c", "x5=d",
        "x6=a", "x8=a", "x8=b", "x10=a"),
    6: ("x1=a", "x1=b"),
}


def reference_log_ahr(scenario: int) -> tuple[np.ndarray, float]:
    """(log subgroup AHRs, log overall AHR) for one scenario."""
    return np.log(np.array(REFERENCE_TRUE_AHR[scenario])), float(np.log(OVERALL[scenario]))
