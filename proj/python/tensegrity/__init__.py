"""Contact estimation for a rolling 3-bar tensegrity robot.

Thin Python layer over the C++ toolkit: simulated data, the symmetry group,
the symmetrized heterogeneous graph network and the contact-aided invariant
EKF.
"""

from ._tensegrity import (
    __version__,
    Model,
    TensegrityError,
    bce_with_logits,
    check_group,
    compute_metrics,
    drift_percent,
    estimate,
    group_elements,
    read_dataset,
    simulate,
    train,
    write_dataset,
)

__all__ = [
    "__version__",
    "Model",
    "TensegrityError",
    "bce_with_logits",
    "check_group",
    "compute_metrics",
    "drift_percent",
    "estimate",
    "group_elements",
    "read_dataset",
    "simulate",
    "train",
    "write_dataset",
]
