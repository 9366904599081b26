"""Built-in sample and response matrices."""

import numpy as np

PAPER_S = np.array([[-2.0, 0.0], [-1.0, 0.0], [0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [1.0, 1.0]])
PAPER_T = np.array([[2.0, 0.0], [1.0, 0.0], [0.0, 0.0], [-2.0, 0.0], [-4.0, 0.0], [0.0, 1.0]])

TANH_S = np.array([[0.0], [1.0], [2.0]])
TANH_T = np.array([0.0, 2.0, 1.0])

BUILTIN = {"paper_s": PAPER_S, "paper_t": PAPER_T}


def builtin(name: str) -> np.ndarray:
    """Return a copy of a built-in matrix by name."""
    try:
        return BUILTIN[name].copy()
    except KeyError:
        raise KeyError(f"unknown dataset {name!r}; choose from {sorted(BUILTIN)}") from None
