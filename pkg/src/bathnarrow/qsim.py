"""Exact density-matrix dynamics of the nuclear bath under Ramsey measurements.

The bath of N spin-1/2 nuclei evolves under one of two conditional
Hamiltonians (electron projection 0 or 1).  A Ramsey experiment on the
electron acts on the bath as a two-outcome measurement channel whose
Kraus operators are built from the two conditional propagators; the
back-action of each outcome narrows or reshapes the distribution of the
collective hyperfine field A_z.

Basis convention: product Z basis, spin index 0 is the most significant
bit; bit value 0 means spin up (+1/2).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .bathgen import BathSpec, secular_correction

MAX_BATH_SPINS = 12

_SPIN_HALF = (
    np.array([[0.0, 0.5], [0.5, 0.0]], dtype=complex),
    np.array([[0.0, -0.5j], [0.5j, 0.0]], dtype=complex),
    np.array([[0.5, 0.0], [0.0, -0.5]], dtype=complex),
)


class SimulationError(RuntimeError):
    pass


def _embed(ops_by_site: dict, n_spins: int) -> np.ndarray:
    """Kronecker product with identities at the sites not listed."""
    out = np.eye(1, dtype=complex)
    for site in range(n_spins):
        out = np.kron(out, ops_by_site.get(site, np.eye(2, dtype=complex)))
    return out


def _check_hermitian(matrix: np.ndarray, tol: float = 1e-12, what: str = "matrix"):
    norm = np.linalg.norm(matrix)
    if norm == 0:
        return
    if np.linalg.norm(matrix - matrix.conj().T) > tol * norm:
        raise SimulationError(f"{what} is not Hermitian within tolerance {tol}")


@dataclass
class ConditionalHamiltonians:
    """The pair of bath Hamiltonians (Hz) for electron projection 0 and 1.

    Eigendecompositions are cached on first use; the same Hamiltonians
    are exponentiated at many sensing times.
    """

    h0: np.ndarray
    h1: np.ndarray

    def __post_init__(self):
        _check_hermitian(self.h0, what="H0")
        _check_hermitian(self.h1, what="H1")
        self._eig = [None, None]
        self._propagators = {}

    @property
    def dim(self) -> int:
        return self.h0.shape[0]

    def hamiltonian(self, mu: int) -> np.ndarray:
        return (self.h0, self.h1)[mu]

    def eigensystem(self, mu: int):
        if self._eig[mu] is None:
            self._eig[mu] = np.linalg.eigh(self.hamiltonian(mu))
        return self._eig[mu]

    def propagator(self, mu: int, tau: float) -> np.ndarray:
        """exp(-i 2 pi H_mu tau) via the cached eigensystem.

        The most recent propagators are memoized: protocol blocks reuse
        the same sensing time many times in a row.
        """
        if tau < 0:
            raise ValueError("tau must be >= 0")
        key = (mu, float(tau))
        cached = self._propagators.get(key)
        if cached is not None:
            return cached
        evals, evecs = self.eigensystem(mu)
        phases = np.exp(-2j * np.pi * evals * tau)
        result = (evecs * phases) @ evecs.conj().T
        if len(self._propagators) >= 32:
            self._propagators.pop(next(iter(self._propagators)))
        self._propagators[key] = result
        return result


def build_hamiltonians(bath: BathSpec, apply_secular_correction: bool = True) -> ConditionalHamiltonians:
    """Assemble the conditional bath Hamiltonians from a BathSpec.

    H_mu = sum_n Omega_n^(mu) . I_n + sum_{n<m} I_n . C_nm^(mu) . I_m with
    Omega_n^(mu) = gamma_n * B + mu * A_n and, when the flag is set, the
    electron-projection-dependent perturbative correction added to C_nm.
    """
    n = bath.n_spins
    if n > MAX_BATH_SPINS:
        raise SimulationError(
            f"bath of {n} spins needs a {2**n}x{2**n} density matrix; "
            f"maximum supported is {MAX_BATH_SPINS}"
        )
    dim = 2**n
    constants = bath.constants
    hams = []
    for mu in (0, 1):
        h = np.zeros((dim, dim), dtype=complex)
        for i in range(n):
            omega = constants.gamma_n * bath.field + mu * bath.hyperfine_vectors[i]
            for a in range(3):
                if omega[a] != 0.0:
                    h += omega[a] * _embed({i: _SPIN_HALF[a]}, n)
        for i in range(n):
            for j in range(i + 1, n):
                c = bath.coupling_tensors[i, j]
                if apply_secular_correction:
                    c = c + secular_correction(
                        bath.hyperfine_tensors[i], bath.hyperfine_tensors[j], mu, constants
                    )
                for a in range(3):
                    for b in range(3):
                        if c[a, b] != 0.0:
                            h += c[a, b] * _embed({i: _SPIN_HALF[a], j: _SPIN_HALF[b]}, n)
        hams.append(h)
    return ConditionalHamiltonians(h0=hams[0], h1=hams[1])


def propagator(hamiltonian: np.ndarray, tau: float) -> np.ndarray:
    """exp(-i 2 pi H tau) of a Hermitian matrix H (Hz) by eigendecomposition."""
    if tau < 0:
        raise ValueError("tau must be >= 0")
    _check_hermitian(hamiltonian, what="hamiltonian")
    evals, evecs = np.linalg.eigh(hamiltonian)
    return (evecs * np.exp(-2j * np.pi * evals * tau)) @ evecs.conj().T


@dataclass
class BathState:
    """Dense bath density matrix in the product Z basis."""

    rho: np.ndarray

    @classmethod
    def thermal(cls, n_spins: int) -> "BathState":
        dim = 2**n_spins
        return cls(rho=np.eye(dim, dtype=complex) / dim)

    @property
    def dim(self) -> int:
        return self.rho.shape[0]

    @property
    def n_spins(self) -> int:
        return int(round(np.log2(self.dim)))

    def copy(self) -> "BathState":
        return BathState(rho=self.rho.copy())

    def check_valid(self, trace_tol: float = 1e-10, eig_floor: float = -1e-10):
        _check_hermitian(self.rho, tol=1e-10, what="density matrix")
        if abs(np.trace(self.rho).real - 1.0) > trace_tol:
            raise SimulationError("density matrix trace deviates from 1")
        if np.linalg.eigvalsh(self.rho).min() < eig_floor:
            raise SimulationError("density matrix has a significantly negative eigenvalue")

    def repaired(self, eig_floor: float = -1e-10) -> "BathState":
        """Clamp tiny negative eigenvalues to zero and renormalize.

        Negative eigenvalues below ``eig_floor`` are treated as a bug,
        not numerical noise, and raise.
        """
        evals, evecs = np.linalg.eigh(self.rho)
        if evals.min() < eig_floor:
            raise SimulationError(
                f"eigenvalue {evals.min():.3e} below repair floor {eig_floor:.0e}"
            )
        clamped = np.clip(evals, 0.0, None)
        rho = (evecs * clamped) @ evecs.conj().T
        return BathState(rho=rho / np.trace(rho).real)


@dataclass
class HyperfineDistribution:
    """Discrete distribution of the collective hyperfine field A_z (Hz)."""

    eigenvalues: np.ndarray
    probabilities: np.ndarray

    def mean(self) -> float:
        return float(self.probabilities @ self.eigenvalues)

    def second_moment(self) -> float:
        return float(self.probabilities @ self.eigenvalues**2)

    def std(self) -> float:
        var = self.second_moment() - self.mean() ** 2
        return float(np.sqrt(max(var, 0.0)))

    def effective_support(self, threshold: float = 1e-3) -> int:
        """Number of comb points carrying more than ``threshold`` of the mass.

        Measurement-induced mixing keeps microscopic weight on every
        point forever, so "collapsed" means one point holding
        essentially all probability, not the others being exactly zero.
        """
        return int(np.count_nonzero(self.probabilities > threshold))


class RamseyOutcome(NamedTuple):
    mu: int
    probability: float
    posterior: BathState


def az_eigenvalues(bath: BathSpec) -> np.ndarray:
    """A_z eigenvalue of every product Z basis state, in basis order."""
    n = bath.n_spins
    idx = np.arange(2**n)
    values = np.zeros(2**n)
    for i in range(n):
        bits = (idx >> (n - 1 - i)) & 1
        values += np.where(bits == 0, 0.5, -0.5) * bath.hyperfine_vectors[i, 2]
    return values


def hyperfine_distribution(state: BathState, bath: BathSpec) -> HyperfineDistribution:
    """True P(A_z): eigenvalue comb with the density-matrix diagonal as weights."""
    probs = np.diag(state.rho).real.copy()
    probs[(probs < 0) & (probs > -1e-12)] = 0.0
    return HyperfineDistribution(eigenvalues=az_eigenvalues(bath), probabilities=probs)


def narrowing_factor(current: HyperfineDistribution, initial: HyperfineDistribution) -> float:
    """Ratio of initial to current standard deviation of P(A_z).

    Returns +inf when the current distribution has fully collapsed
    (discretization floor).
    """
    sigma_0 = initial.std()
    if not sigma_0 > 0:
        raise ValueError("initial distribution must have nonzero variance")
    sigma = current.std()
    if sigma == 0.0:
        return float("inf")
    return sigma_0 / sigma


def ramsey_kraus(hamiltonians: ConditionalHamiltonians, tau: float, phi: float):
    """Kraus pair (M0, M1) of the Ramsey measurement channel.

    M_mu = (U0 + (-1)^mu e^{-i phi} U1) / 2, normalized so that
    M0^dag M0 + M1^dag M1 = I and the tau=0, phi=0 channel reports
    outcome 0 with certainty.
    """
    u0 = hamiltonians.propagator(0, tau)
    u1 = np.exp(-1j * phi) * hamiltonians.propagator(1, tau)
    return 0.5 * (u0 + u1), 0.5 * (u0 - u1)


def ramsey_measure(
    state: BathState,
    hamiltonians: ConditionalHamiltonians,
    tau: float,
    phi: float,
    rng: np.random.Generator,
) -> RamseyOutcome:
    """Sample one Ramsey outcome and apply its back-action to the bath."""
    m0, m1 = ramsey_kraus(hamiltonians, tau, phi)
    x0 = m0 @ state.rho
    p0 = float(np.sum(x0 * m0.conj()).real)
    p0 = min(max(p0, 0.0), 1.0)
    if rng.random() < p0:
        mu, kraus, x = 0, m0, x0
        probability = p0
    else:
        mu, kraus = 1, m1
        x = m1 @ state.rho
        probability = float(np.sum(x * m1.conj()).real)
    posterior = x @ kraus.conj().T
    posterior = 0.5 * (posterior + posterior.conj().T)
    trace = np.trace(posterior).real
    if trace < 1e-15:
        raise SimulationError("posterior trace underflow for the sampled branch")
    return RamseyOutcome(mu=mu, probability=probability, posterior=BathState(rho=posterior / trace))


def ramsey_signal(
    state: BathState,
    hamiltonians: ConditionalHamiltonians,
    tau_grid: Sequence[float],
) -> np.ndarray:
    """S_R(tau) = Tr(U0(tau) rho U1(tau)^dag) over a grid of sensing times."""
    tau_grid = np.asarray(tau_grid, dtype=float)
    evals0, evecs0 = hamiltonians.eigensystem(0)
    evals1, evecs1 = hamiltonians.eigensystem(1)
    w = evecs0.conj().T @ state.rho @ evecs1
    x = evecs1.conj().T @ evecs0
    kernel = w * x.T
    e0 = np.exp(-2j * np.pi * np.outer(tau_grid, evals0))
    e1 = np.exp(2j * np.pi * np.outer(tau_grid, evals1))
    return np.einsum("ta,ab,tb->t", e0, kernel, e1)


def outcome_probability(
    state: BathState,
    hamiltonians: ConditionalHamiltonians,
    tau: float,
    phi: float,
) -> float:
    """p(mu=0) without sampling, via the Ramsey signal."""
    s = ramsey_signal(state, hamiltonians, np.array([tau]))[0]
    return 0.5 * (1.0 + (np.exp(1j * phi) * s).real)


class T2Fit(NamedTuple):
    t2: float
    residual: float


class T2FitError(RuntimeError):
    pass


def _envelope_indices(signal: np.ndarray) -> np.ndarray:
    from scipy.signal import argrelmax

    peaks = argrelmax(signal, order=1)[0]
    peaks = peaks[signal[peaks] > 0.05 * signal.max()]
    idx = np.unique(np.concatenate([[0], peaks]))
    if len(idx) < 4:
        idx = np.arange(len(signal))
    return idx


def fit_t2(signal: Sequence[float], tau_grid: Sequence[float]) -> T2Fit:
    """Fit exp[-(tau/T2)^2] to the upper envelope of |S_R|.

    The envelope is the set of local maxima (the full signal when it has
    no fringe structure).  Fails with advice to extend the grid when the
    signal has not decayed by 1/e within it.
    """
    signal = np.asarray(signal, dtype=float)
    tau_grid = np.asarray(tau_grid, dtype=float)
    if len(signal) < 8:
        raise T2FitError("need at least 8 samples to fit the envelope")
    idx = _envelope_indices(signal)
    env_tau, env = tau_grid[idx], signal[idx]
    if env.min() > np.exp(-1.0):
        raise T2FitError("signal has not decayed by 1/e within the grid; extend the tau grid")
    keep = (env > 1e-3) & (env_tau > 0)
    if keep.sum() < 2:
        raise T2FitError("too few usable envelope points; refine the tau grid")
    y = np.log(env[keep])
    t = env_tau[keep]
    beta = -(t**2 @ y) / (t**4).sum()
    if beta <= 0:
        raise T2FitError("envelope does not decay; extend the tau grid")
    t2 = 1.0 / np.sqrt(beta)
    residual = float(np.sqrt(np.mean((env - np.exp(-((env_tau / t2) ** 2))) ** 2)))
    return T2Fit(t2=float(t2), residual=residual)


def free_evolve(state: BathState, hamiltonians: ConditionalHamiltonians, duration: float) -> BathState:
    """Evolve the bath under H0 (electron idle in projection 0) for ``duration`` seconds."""
    if duration < 0:
        raise ValueError("duration must be >= 0")
    u = hamiltonians.propagator(0, duration)
    rho = u @ state.rho @ u.conj().T
    rho = 0.5 * (rho + rho.conj().T)
    return BathState(rho=rho / np.trace(rho).real)


def zero_intercluster(bath: BathSpec, partition: Sequence[Sequence[int]]) -> BathSpec:
    """Copy of the bath with couplings between different clusters zeroed."""
    label = {}
    for c, members in enumerate(partition):
        for i in members:
            label[i] = c
    if sorted(label) != list(range(bath.n_spins)):
        raise ValueError("partition must cover every spin exactly once")
    couplings = bath.coupling_tensors.copy()
    for i in range(bath.n_spins):
        for j in range(bath.n_spins):
            if i != j and label[i] != label[j]:
                couplings[i, j] = 0.0
    return dataclasses.replace(bath, coupling_tensors=couplings)


def cluster_counterexample(
    bath: BathSpec,
    partition: Sequence[Sequence[int]],
    tau: float,
    phi: float,
    outcome: int = 0,
    apply_secular_correction: bool = False,
) -> float:
    """Frobenius gap between the joint and the per-cluster conditional update.

    Starting from the thermal state, one Ramsey measurement post-selected
    on ``outcome`` is applied (a) with the joint Kraus operator on the
    full bath and (b) cluster by cluster, taking the product afterwards.
    The two disagree for more than one cluster at generic tau even with
    all intercluster couplings zero, which is why clustered dynamics are
    not used anywhere in this package.  The perturbative coupling
    correction defaults off here: it would reintroduce intercluster
    terms through the hyperfine tensors and muddy the comparison.
    """
    blocks = [np.asarray(b, dtype=int) for b in partition]
    expected = 0
    for block in blocks:
        if not np.array_equal(block, np.arange(expected, expected + len(block))):
            raise ValueError("clusters must be contiguous ascending index blocks")
        expected += len(block)
    if expected != bath.n_spins:
        raise ValueError("partition must cover every spin exactly once")
    label = np.concatenate([np.full(len(b), c) for c, b in enumerate(blocks)])
    for i in range(bath.n_spins):
        for j in range(bath.n_spins):
            if label[i] != label[j] and not np.allclose(bath.coupling_tensors[i, j], 0.0):
                raise ValueError("intercluster couplings must be zero (see zero_intercluster)")

    def post_selected(spec: BathSpec) -> np.ndarray:
        hams = build_hamiltonians(spec, apply_secular_correction)
        kraus = ramsey_kraus(hams, tau, phi)[outcome]
        rho0 = np.eye(2**spec.n_spins, dtype=complex) / 2**spec.n_spins
        rho = kraus @ rho0 @ kraus.conj().T
        return rho / np.trace(rho).real

    rho_full = post_selected(bath)
    rho_clus = np.eye(1, dtype=complex)
    for block in blocks:
        rho_clus = np.kron(rho_clus, post_selected(bath.subset(block)))
    return float(np.linalg.norm(rho_full - rho_clus))
