"""Close-out amounts, variation margin, and default-exposure functionals."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .payoffs import Contract


@dataclass(frozen=True)
class CloseoutSpec:
    """Close-out convention plus the loss fractions it is applied with.

    ``e_E`` is the endowed (pre-existing) exposure, restricted to a
    deterministic constant; the main theorems set it to zero.
    """

    convention: str
    Lm: float
    LH: float
    LC: float
    e_E: float = 0.0

    def __post_init__(self):
        if self.convention not in ("clean", "replacement"):
            raise ConfigurationError("convention must be 'clean' or 'replacement'")
        for name in ("Lm", "LH", "LC"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1]")

    @classmethod
    def from_contract(cls, contract: Contract, e_E: float = 0.0) -> "CloseoutSpec":
        return cls(contract.closeout, contract.Lm, contract.LH, contract.LC, e_E)


def closeout_amount(spec: CloseoutSpec, p_tilde, Y=0.0, B=1.0):
    """Undiscounted close-out amount of the new contract.

    Clean close-out settles at the clean price; replacement close-out at the
    hedger's own adjusted value V_- - B^eps = B*Y + p^N (the replacing party
    is assumed to share the hedger's funding spreads).
    """
    p_tilde = np.asarray(p_tilde, dtype=float)
    if spec.convention == "clean":
        return B * p_tilde
    return B * (np.asarray(Y, dtype=float) + p_tilde)


def margin(spec: CloseoutSpec, e_N):
    """Variation margin m^N = (1 - L^m) e^N (rehypothecable, cash)."""
    return (1.0 - spec.Lm) * np.asarray(e_N, dtype=float)


def theta_exposures(spec: CloseoutSpec, Y, p_tilde, e_tilde_E=None):
    """Discounted default-exposure functionals and their incremental forms.

    Returns (Theta_H, Theta_C, Theta_dH, Theta_dC) evaluated at the
    pre-default value ``Y`` (ignored under clean close-out).  The incremental
    forms subtract the endowed-exposure baselines L^H L^m (e~^E)^+ and
    L^C L^m (e~^E)^-.
    """
    p_tilde = np.asarray(p_tilde, dtype=float)
    Y = np.asarray(Y, dtype=float)
    eE = np.asarray(spec.e_E if e_tilde_E is None else e_tilde_E, dtype=float)
    aH = spec.LH * spec.Lm
    aC = spec.LC * spec.Lm
    pos_base = aH * np.maximum(eE, 0.0)
    neg_base = aC * np.maximum(-eE, 0.0)
    if spec.convention == "clean":
        tH = aH * np.maximum(p_tilde + eE, 0.0)
        tC = aC * np.maximum(-(p_tilde + eE), 0.0)
    else:
        tH = -Y + aH * np.maximum(Y + p_tilde + eE, 0.0)
        tC = Y + aC * np.maximum(-(Y + p_tilde + eE), 0.0)
    return tH, tC, tH - pos_base, tC - neg_base
