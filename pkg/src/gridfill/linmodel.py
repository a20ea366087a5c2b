"""First-order linear voltage model around the no-load point.

With ``w`` the no-load voltage and ``G = YLL^-1 diag(conj(w))^-1``, the
phasor and magnitude responses to an injection vector ``s`` are

    v   ~  w   + G conj(s)
    |v| ~ |w|  + Re(diag(conj(w)/|w|) G conj(s))

which, split into real coordinates over ``[Re(s); Im(s)]``, yields the
six real coefficient blocks A1..A4, C1, C2 used throughout the
estimator.  The time-stacked form repeats one block per snapshot on the
diagonal, since topology and slack voltage are held constant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericalError
from .feeder import MultiphaseAdmittance, PhaseId


@dataclass(frozen=True)
class LinearPowerFlowModel:
    """Complex and real-block coefficients of the linear voltage model."""

    B: np.ndarray   # complex, n x 2n, phasor sensitivity
    C: np.ndarray   # real, n x 2n, magnitude sensitivity
    w: np.ndarray   # complex, n, no-load voltage
    ordering: tuple[PhaseId, ...]
    linearization: str = "no-load"

    @property
    def n(self) -> int:
        return self.w.shape[0]

    @property
    def A1(self) -> np.ndarray:
        return np.real(self.B[:, : self.n])

    @property
    def A2(self) -> np.ndarray:
        return np.real(self.B[:, self.n :])

    @property
    def A3(self) -> np.ndarray:
        return np.imag(self.B[:, : self.n])

    @property
    def A4(self) -> np.ndarray:
        return np.imag(self.B[:, self.n :])

    @property
    def C1(self) -> np.ndarray:
        return self.C[:, : self.n]

    @property
    def C2(self) -> np.ndarray:
        return self.C[:, self.n :]

    def predict(self, s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Approximate (v, |v|) for complex injections ``s``."""
        x = np.concatenate([np.real(s), np.imag(s)])
        v = self.B @ x + self.w
        vmag = self.C @ x + np.abs(self.w)
        return v, vmag


def linearize_power_flow(
    adm: MultiphaseAdmittance, v0: np.ndarray
) -> LinearPowerFlowModel:
    """Derive the no-load linear voltage model from the network matrix."""
    v0 = np.asarray(v0, dtype=complex)
    w = np.linalg.solve(adm.YLL, -adm.YL0 @ v0)
    if np.any(np.abs(w) == 0.0):
        dead = [pid.label() for pid, wk in zip(adm.ordering, w) if abs(wk) == 0.0]
        raise NumericalError(f"no-load voltage is zero at phases {dead}")
    G = np.linalg.solve(adm.YLL, np.diag(1.0 / np.conj(w)))
    # v = w + G conj(s):  conj(s) = Re(s) - 1j Im(s)
    B = np.hstack([G, -1j * G])
    H = (np.conj(w) / np.abs(w))[:, None] * G
    C = np.hstack([np.real(H), np.imag(H)])
    return LinearPowerFlowModel(B=B, C=C, w=w, ordering=adm.ordering)


@dataclass(frozen=True)
class StackedLinearModel:
    """Block-diagonal time stack of one linear voltage model.

    ``block`` is the 3n x 2n matrix ``[A1 A2; A3 A4; C1 C2]`` and
    ``b_block`` the 3n vector ``[Re(w); Im(w); |w|]``.  The full
    ``A`` (3Tn x 2Tn) and ``b`` (3Tn) are materialized on demand; the
    estimator works from the single block, which is what keeps large
    feeders tractable.
    """

    block: np.ndarray
    b_block: np.ndarray
    T: int

    def __post_init__(self):
        if self.T < 1:
            raise ConfigError("T must be >= 1")
        n = self.n
        if self.block.shape != (3 * n, 2 * n) or self.b_block.shape != (3 * n,):
            raise ConfigError("inconsistent block shapes")

    @property
    def n(self) -> int:
        return self.block.shape[1] // 2

    @property
    def A(self) -> np.ndarray:
        """Dense 3Tn x 2Tn block-diagonal matrix (built on demand)."""
        n, T = self.n, self.T
        A = np.zeros((3 * T * n, 2 * T * n))
        for t in range(T):
            A[3 * n * t : 3 * n * (t + 1), 2 * n * t : 2 * n * (t + 1)] = self.block
        return A

    @property
    def b(self) -> np.ndarray:
        return np.tile(self.b_block, self.T)

    def coeff_rows(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """The (P, Q) pair multiplying [Re(s); Im(s)] for row type ``k``
        (0 = Re(v), 1 = Im(v), 2 = |v|)."""
        n = self.n
        return (
            self.block[k * n : (k + 1) * n, :n],
            self.block[k * n : (k + 1) * n, n:],
        )

    def offset_rows(self, k: int) -> np.ndarray:
        n = self.n
        return self.b_block[k * n : (k + 1) * n]


def build_block_model(lin: LinearPowerFlowModel, T: int) -> StackedLinearModel:
    """Stack the linear model over ``T`` snapshots."""
    if T < 1:
        raise ConfigError(f"T must be a positive integer, got {T}")
    block = np.vstack(
        [
            np.hstack([lin.A1, lin.A2]),
            np.hstack([lin.A3, lin.A4]),
            np.hstack([lin.C1, lin.C2]),
        ]
    )
    b_block = np.concatenate([np.real(lin.w), np.imag(lin.w), np.abs(lin.w)])
    return StackedLinearModel(block=block, b_block=b_block, T=int(T))


def save_linear_model(lin: LinearPowerFlowModel, path) -> None:
    """Binary export of the model coefficients and phase ordering."""
    np.savez_compressed(
        path,
        B=lin.B,
        C=lin.C,
        w=lin.w,
        phases=np.array([pid.label() for pid in lin.ordering]),
        linearization=np.array(lin.linearization),
    )


def load_linear_model(path) -> LinearPowerFlowModel:
    with np.load(path, allow_pickle=False) as data:
        ordering = tuple(PhaseId.from_label(str(x)) for x in data["phases"])
        return LinearPowerFlowModel(
            B=data["B"],
            C=data["C"],
            w=data["w"],
            ordering=ordering,
            linearization=str(data["linearization"]),
        )
