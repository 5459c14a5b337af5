"""Random dilute nuclear-spin bath geometries and their coupling tensors.

Spins sit on the conventional diamond lattice around a central electron
spin at the origin.  Couplings use the point-dipole form throughout (no
Fermi-contact term; nearby sites are removed by the exclusion radius).

Units: positions in nm, magnetic field in T, every coupling in Hz
(energy divided by the Planck constant), gyromagnetic ratios in Hz/T.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

import numpy as np

# mu0/(4*pi) * h, expressed so that prefactor * gamma * gamma' / r[nm]^3
# with gammas in Hz/T yields a coupling in Hz.
DIPOLAR_PREFACTOR = 1e-7 * 6.62607015e-34 * 1e27

# Fractional coordinates of the 8-atom conventional diamond cell.
_DIAMOND_BASIS = np.array(
    [
        [0.00, 0.00, 0.00],
        [0.00, 0.50, 0.50],
        [0.50, 0.00, 0.50],
        [0.50, 0.50, 0.00],
        [0.25, 0.25, 0.25],
        [0.25, 0.75, 0.75],
        [0.75, 0.25, 0.75],
        [0.75, 0.75, 0.25],
    ]
)

BATH_FORMAT = "bathnarrow.bath.v1"


class BathGenerationError(RuntimeError):
    """Raised when a bath cannot be generated with the given parameters."""


@dataclass(frozen=True)
class PhysicalConstants:
    """Constants of the central-spin/nuclear-bath system.

    Defaults describe an NV-style electron spin in diamond with a 13C
    bath; values are standard reference numbers, configurable for other
    hosts.

    Attributes:
        gamma_e: Electron gyromagnetic ratio (Hz/T).
        gamma_n: Nuclear gyromagnetic ratio (Hz/T).
        zero_field_splitting: Electron zero-field splitting D (Hz).
        dipolar_prefactor: mu0*h/(4*pi) in units such that
            prefactor * gamma * gamma' / r^3 is in Hz for r in nm.
        lattice_constant: Conventional cubic cell edge (nm).
    """

    gamma_e: float = 2.8024e10
    gamma_n: float = 1.0705e7
    zero_field_splitting: float = 2.87e9
    dipolar_prefactor: float = DIPOLAR_PREFACTOR
    lattice_constant: float = 0.3567

    def __post_init__(self):
        for name in dataclasses.fields(self):
            value = getattr(self, name.name)
            if not value > 0:
                raise ValueError(f"{name.name} must be strictly positive, got {value}")


@dataclass(frozen=True)
class BathSpec:
    """Geometry and couplings of one nuclear-spin bath.

    ``hyperfine_vectors[n]`` is the z-row of ``hyperfine_tensors[n]``,
    i.e. (A_zx, A_zy, A_zz) for spin n.  ``coupling_tensors`` is an
    (N, N, 3, 3) array with zero diagonal blocks and
    ``coupling_tensors[m, n] == coupling_tensors[n, m].T``.
    """

    n_spins: int
    positions: np.ndarray
    hyperfine_tensors: np.ndarray
    hyperfine_vectors: np.ndarray
    coupling_tensors: np.ndarray
    field: np.ndarray
    rng_seed: int
    constants: PhysicalConstants = PhysicalConstants()

    def __post_init__(self):
        object.__setattr__(self, "positions", np.asarray(self.positions, dtype=float))
        object.__setattr__(self, "hyperfine_tensors", np.asarray(self.hyperfine_tensors, dtype=float))
        object.__setattr__(self, "hyperfine_vectors", np.asarray(self.hyperfine_vectors, dtype=float))
        object.__setattr__(self, "coupling_tensors", np.asarray(self.coupling_tensors, dtype=float))
        object.__setattr__(self, "field", np.asarray(self.field, dtype=float))
        self.validate()

    def validate(self):
        n = self.n_spins
        if self.positions.shape != (n, 3):
            raise ValueError("positions must have shape (n_spins, 3)")
        if self.hyperfine_tensors.shape != (n, 3, 3):
            raise ValueError("hyperfine_tensors must have shape (n_spins, 3, 3)")
        if self.hyperfine_vectors.shape != (n, 3):
            raise ValueError("hyperfine_vectors must have shape (n_spins, 3)")
        if self.coupling_tensors.shape != (n, n, 3, 3):
            raise ValueError("coupling_tensors must have shape (n_spins, n_spins, 3, 3)")
        if self.field.shape != (3,):
            raise ValueError("field must be a 3-vector")
        if not np.allclose(self.hyperfine_vectors, self.hyperfine_tensors[:, 2, :]):
            raise ValueError("hyperfine_vectors must equal row z of hyperfine_tensors")
        for i in range(n):
            if not np.allclose(self.coupling_tensors[i, i], 0.0):
                raise ValueError("self-coupling blocks must be zero")

    def with_field(self, field) -> "BathSpec":
        """Same geometry under a different external field."""
        return dataclasses.replace(self, field=np.asarray(field, dtype=float))

    def subset(self, indices) -> "BathSpec":
        """Bath restricted to the given spin indices (order preserved)."""
        idx = np.asarray(indices, dtype=int)
        return dataclasses.replace(
            self,
            n_spins=len(idx),
            positions=self.positions[idx],
            hyperfine_tensors=self.hyperfine_tensors[idx],
            hyperfine_vectors=self.hyperfine_vectors[idx],
            coupling_tensors=self.coupling_tensors[np.ix_(idx, idx)],
        )

    def to_json(self) -> str:
        """Serialize to the documented text format (bit-exact round trip)."""
        payload = {
            "format": BATH_FORMAT,
            "n_spins": self.n_spins,
            "rng_seed": self.rng_seed,
            "field": self.field.tolist(),
            "positions": self.positions.tolist(),
            "hyperfine_tensors": self.hyperfine_tensors.tolist(),
            "coupling_tensors": self.coupling_tensors.tolist(),
            "constants": dataclasses.asdict(self.constants),
        }
        return json.dumps(payload, sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "BathSpec":
        payload = json.loads(text)
        if payload.get("format") != BATH_FORMAT:
            raise ValueError(
                f"unrecognized bath format {payload.get('format')!r}; expected {BATH_FORMAT!r}"
            )
        tensors = np.asarray(payload["hyperfine_tensors"], dtype=float)
        return cls(
            n_spins=payload["n_spins"],
            positions=np.asarray(payload["positions"], dtype=float),
            hyperfine_tensors=tensors,
            hyperfine_vectors=tensors[:, 2, :],
            coupling_tensors=np.asarray(payload["coupling_tensors"], dtype=float),
            field=np.asarray(payload["field"], dtype=float),
            rng_seed=payload["rng_seed"],
            constants=PhysicalConstants(**payload["constants"]),
        )


def _dipolar_tensor(separation: np.ndarray, coupling: float) -> np.ndarray:
    # coupling * (I - 3 n n^T): symmetric and traceless by construction.
    r = np.linalg.norm(separation)
    n_hat = separation / r
    return coupling / r**3 * (np.eye(3) - 3.0 * np.outer(n_hat, n_hat))


def hyperfine_tensor(position, constants: PhysicalConstants = PhysicalConstants()) -> np.ndarray:
    """Point-dipole electron-nuclear hyperfine tensor (Hz) at ``position`` (nm)."""
    position = np.asarray(position, dtype=float)
    if not np.linalg.norm(position) > 0:
        raise ValueError("nuclear position must not coincide with the central spin")
    coupling = constants.dipolar_prefactor * constants.gamma_e * constants.gamma_n
    return _dipolar_tensor(position, coupling)


def nuclear_coupling_tensor(pos_i, pos_j, constants: PhysicalConstants = PhysicalConstants()) -> np.ndarray:
    """Point-dipole nuclear-nuclear coupling tensor (Hz) between two sites (nm)."""
    pos_i = np.asarray(pos_i, dtype=float)
    pos_j = np.asarray(pos_j, dtype=float)
    separation = pos_j - pos_i
    if not np.linalg.norm(separation) > 0:
        raise ValueError("coincident nuclear positions")
    coupling = constants.dipolar_prefactor * constants.gamma_n**2
    return _dipolar_tensor(separation, coupling)


def secular_correction(
    hyperfine_tensor_i,
    hyperfine_tensor_j,
    mu: int,
    constants: PhysicalConstants = PhysicalConstants(),
) -> np.ndarray:
    """Perturbative nuclear-nuclear coupling correction (Hz) for electron projection ``mu``.

    The transverse hyperfine rows of each spin enter through a g-tensor
    correction, giving an effective coupling that depends on the
    electron projection of the current Ramsey run.
    """
    if mu not in (0, 1):
        raise ValueError("mu must be 0 or 1")
    a_i = np.asarray(hyperfine_tensor_i, dtype=float)
    a_j = np.asarray(hyperfine_tensor_j, dtype=float)
    factor = (2.0 - 3.0 * mu) * constants.gamma_e / (constants.zero_field_splitting * constants.gamma_n)
    dg_i = factor * np.vstack([a_i[0], a_i[1], np.zeros(3)])
    dg_j = factor * np.vstack([a_j[0], a_j[1], np.zeros(3)])
    prefactor = -constants.zero_field_splitting * (constants.gamma_n / constants.gamma_e) ** 2 / (2.0 - 3.0 * mu)
    return prefactor * (dg_i.T @ dg_j)


def diamond_lattice_sites(
    max_radius: float,
    constants: PhysicalConstants = PhysicalConstants(),
    exclusion_radius: float = 0.0,
) -> np.ndarray:
    """All diamond-lattice sites with exclusion_radius < |r| <= max_radius, in nm.

    Site order is deterministic (cell-major, then basis order) so that
    seeded occupancy draws are reproducible.
    """
    a = constants.lattice_constant
    reach = int(np.ceil(max_radius / a)) + 1
    cells = np.arange(-reach, reach + 1)
    ii, jj, kk = np.meshgrid(cells, cells, cells, indexing="ij")
    corners = np.stack([ii, jj, kk], axis=-1).reshape(-1, 3)
    sites = (corners[:, None, :] + _DIAMOND_BASIS[None, :, :]).reshape(-1, 3) * a
    dist = np.linalg.norm(sites, axis=1)
    keep = (dist > max(exclusion_radius, 1e-9)) & (dist <= max_radius)
    return sites[keep]


def sample_bath(
    n_spins: int,
    concentration: float,
    constants: PhysicalConstants = PhysicalConstants(),
    exclusion_radius: float = 0.5,
    rng_seed: int = 0,
    max_radius: float = 2.5,
    field=(0.0, 0.0, 0.25),
) -> BathSpec:
    """Draw a random dilute bath on the diamond lattice.

    Each candidate site within ``max_radius`` passes an independent
    Bernoulli(``concentration``) trial; the ``n_spins`` occupied sites
    nearest the origin are kept (distance ties broken by coordinates).

    Raises:
        BathGenerationError: fewer than ``n_spins`` sites pass the trial;
            increase ``max_radius`` or ``concentration``.
    """
    if n_spins < 1:
        raise ValueError("n_spins must be >= 1")
    if not 0.0 < concentration <= 1.0:
        raise ValueError("concentration must be in (0, 1]")
    if exclusion_radius < 0:
        raise ValueError("exclusion_radius must be >= 0")

    sites = diamond_lattice_sites(max_radius, constants, exclusion_radius)
    rng = np.random.default_rng(rng_seed)
    occupied = sites[rng.random(len(sites)) < concentration]
    if len(occupied) < n_spins:
        raise BathGenerationError(
            f"only {len(occupied)} occupied sites within {max_radius} nm; "
            f"need {n_spins} (increase max_radius or concentration)"
        )
    order = np.lexsort((occupied[:, 2], occupied[:, 1], occupied[:, 0], np.linalg.norm(occupied, axis=1)))
    positions = occupied[order[:n_spins]]

    tensors = np.stack([hyperfine_tensor(p, constants) for p in positions])
    couplings = np.zeros((n_spins, n_spins, 3, 3))
    for i in range(n_spins):
        for j in range(i + 1, n_spins):
            c = nuclear_coupling_tensor(positions[i], positions[j], constants)
            couplings[i, j] = c
            couplings[j, i] = c.T

    return BathSpec(
        n_spins=n_spins,
        positions=positions,
        hyperfine_tensors=tensors,
        hyperfine_vectors=tensors[:, 2, :],
        coupling_tensors=couplings,
        field=np.asarray(field, dtype=float),
        rng_seed=rng_seed,
        constants=constants,
    )
