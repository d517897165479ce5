"""Brute-force walker on a finite chain, independent of the Bessel machinery.

The chain is wide enough that the wave packet never reaches its ends
within the simulated time, so it stands in for the infinite lattice.
"""

import numpy as np
from scipy.linalg import eigh_tridiagonal


class FiniteChain:
    def __init__(self, half_width: int, tau: float):
        self.L = half_width
        size = 2 * half_width + 1
        # H = -(|j><j+1| + h.c.) gives <j|e^{-iHt}|x0> = i^|j-x0| J_|j-x0|(2t)
        evals, vecs = eigh_tridiagonal(np.zeros(size), -np.ones(size - 1))
        self.U = (vecs * np.exp(-1j * evals * tau)) @ vecs.T

    def index(self, site: int) -> int:
        return site + self.L

    def evolve(self, psi, steps=1):
        for _ in range(steps):
            psi = self.U @ psi
        return psi

    def ket(self, site: int) -> np.ndarray:
        psi = np.zeros(2 * self.L + 1, dtype=complex)
        psi[self.index(site)] = 1.0
        return psi

    def first_detection(self, start: int, detector: int, N: int) -> np.ndarray:
        """Amplitudes phi_1..phi_N of stroboscopic first detection at ``detector``."""
        psi = self.ket(start)
        k = self.index(detector)
        out = np.empty(N, dtype=complex)
        for n in range(N):
            psi = self.U @ psi
            out[n] = psi[k]
            psi[k] = 0.0
        return out

    def ipr_detection(self, start: int, detector: int, r: int, N: int) -> np.ndarray:
        """First-detection probabilities with a reset to ``start`` after every ``r`` failed measurements."""
        k = self.index(detector)
        F = np.empty(N)
        survive = 1.0
        psi = self.ket(start)
        for n in range(N):
            if n and n % r == 0:
                psi = self.ket(start) * np.sqrt(survive)
            psi = self.U @ psi
            F[n] = abs(psi[k]) ** 2
            psi[k] = 0.0
            survive -= F[n]
        return F
