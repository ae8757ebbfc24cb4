"""Ion-cavity model: level structure, Hamiltonian and collapse operators.

Units throughout the package: time in microseconds, angular frequencies in
rad/us (so ``2*pi*1.0`` is 1 MHz).  The Hilbert space is
``atom (8 or 9 levels) x cavity mode 1 x cavity mode 2``, each mode truncated
to ``fock_cutoff`` Fock states.  Mode 1 is polarised along the magnetic field
(pi light); mode 2 is polarised perpendicular to both the field and the cavity
axis and therefore carries an equal-weight superposition of sigma+ and sigma-.

Detunings follow the convention ``delta = omega_atom - omega_field``, so a
positive ``delta_drive`` puts the P manifold at ``+delta_drive`` in the frame
rotating with the drive.
"""
from __future__ import annotations

import dataclasses
import enum
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property

import numpy as np
from scipy import constants

from .angular import clebsch_gordan

TWO_PI = 2.0 * np.pi
# mu_B / h in MHz per tesla
BOHR_MHZ_PER_T = constants.physical_constants["Bohr magneton in Hz/T"][0] * 1e-6
SPEED_OF_LIGHT = constants.c


def mhz(value: float) -> float:
    """Convert a frequency in MHz to an angular frequency in rad/us."""
    return TWO_PI * value


class Manifold(enum.Enum):
    S12 = "S12"
    P12 = "P12"
    D32 = "D32"
    DARK = "DARK"

    @property
    def j(self) -> Fraction:
        return {"S12": Fraction(1, 2), "P12": Fraction(1, 2), "D32": Fraction(3, 2)}[self.value]


class Polarization(enum.IntEnum):
    SIGMA_MINUS = -1
    PI = 0
    SIGMA_PLUS = 1


@dataclass(frozen=True, order=True)
class AtomicLevel:
    manifold: Manifold = field(compare=False)
    m: Fraction
    index: int = field(compare=True)

    def __str__(self) -> str:
        if self.manifold is Manifold.DARK:
            return "DARK"
        sign = "+" if self.m > 0 else "-"
        return f"{self.manifold.value}({sign}{abs(self.m.numerator)}/{self.m.denominator})"

    @property
    def label(self) -> str:
        """Column-friendly name, e.g. ``S12_p1/2`` -> ``S12_p1_2``."""
        if self.manifold is Manifold.DARK:
            return "DARK"
        sign = "p" if self.m > 0 else "m"
        return f"{self.manifold.value}_{sign}{abs(self.m.numerator)}_{self.m.denominator}"


def _make_levels() -> tuple[AtomicLevel, ...]:
    half = Fraction(1, 2)
    spec = [
        (Manifold.S12, -half), (Manifold.S12, half),
        (Manifold.P12, -half), (Manifold.P12, half),
        (Manifold.D32, -3 * half), (Manifold.D32, -half),
        (Manifold.D32, half), (Manifold.D32, 3 * half),
        (Manifold.DARK, Fraction(0)),
    ]
    return tuple(AtomicLevel(man, m, i) for i, (man, m) in enumerate(spec))


ALL_LEVELS = _make_levels()
S_MINUS, S_PLUS, P_MINUS, P_PLUS, D_M3, D_M1, D_P1, D_P3, DARK = ALL_LEVELS


def level(manifold: Manifold | str, m) -> AtomicLevel:
    """Look up a level by manifold and magnetic quantum number."""
    manifold = Manifold(manifold)
    m = Fraction(m)
    for lev in ALL_LEVELS:
        if lev.manifold is manifold and lev.m == m:
            return lev
    raise ValueError(f"no sublevel m={m} in manifold {manifold.value}")


def _default_g_factors() -> dict[str, float]:
    return {"S12": 2.0023, "P12": 2.0 / 3.0, "D32": 0.8}


@dataclass(frozen=True)
class SystemParams:
    """Physical settings of ion, cavity and drive (angular frequencies in rad/us).

    ``gamma_total`` and ``branching_SD`` are literature values for 40Ca+
    (P1/2 lifetime 7.1 ns, P1/2 -> D3/2 branching 0.064), not measured here.
    ``delta_cavity=None`` places the target Raman pair S(+1/2) -> D(-1/2)
    on two-photon resonance, so that ``raman_offset`` is the only residual
    two-photon detuning.  With ``stark_compensation`` the resonance includes the
    second-order light shifts of the two dressed states, as it would when located
    by spectroscopy; otherwise it is the bare Zeeman resonance.

    ``g0`` is the vacuum coupling of the strongest cavity-coupled transition
    (pi light on P(+-1/2) <-> D(+-1/2)); every other P-D transition scales by its
    Clebsch-Gordan amplitude and polarisation projection relative to it.  The
    drive couples each S-P pair with ``omega_drive / 2`` times the
    Clebsch-Gordan amplitude.
    """

    g0: float = mhz(1.6)
    kappa: float = mhz(0.054)
    gamma_total: float = mhz(22.4)
    branching_SD: float = 0.064
    omega_drive: float = mhz(30.0)
    delta_drive: float = mhz(335.0)
    delta_cavity: float | None = None
    raman_offset: float = mhz(0.060)
    drive_linewidth: float = mhz(0.030)
    B_field: float = 0.2e-3
    g_factors: dict = field(default_factory=_default_g_factors)
    fock_cutoff: int = 3
    cavity_length: float = 0.02
    finesse: float = 70_000.0
    dark_decay_rate: float = 0.0
    drive_polarization: Polarization = Polarization.PI
    stark_compensation: bool = True

    def __post_init__(self):
        object.__setattr__(self, "drive_polarization", _as_polarization(self.drive_polarization))
        object.__setattr__(self, "g_factors", dict(self.g_factors))
        errors = []
        for name in ("g0", "kappa", "gamma_total", "omega_drive"):
            if not getattr(self, name) >= 0:
                errors.append(f"{name} must be >= 0")
        if not (isinstance(self.fock_cutoff, (int, np.integer)) and self.fock_cutoff >= 1):
            errors.append("fock_cutoff must be an integer >= 1")
        if not 0 < self.branching_SD < 1:
            errors.append("branching_SD must lie in (0, 1)")
        if self.drive_linewidth < 0 or self.dark_decay_rate < 0:
            errors.append("drive_linewidth and dark_decay_rate must be >= 0")
        missing = {"S12", "P12", "D32"} - set(self.g_factors)
        if missing:
            errors.append(f"g_factors missing {sorted(missing)}")
        if errors:
            raise ValueError("invalid SystemParams: " + "; ".join(errors))

        scale = max(self.g0, self.omega_drive)
        ratio = min(abs(self.delta_drive), abs(self.cavity_detuning)) / scale if scale > 0 else np.inf
        if ratio < 10:
            warnings.warn(
                f"detuning/coupling ratio {ratio:.1f} < 10: far-off-resonant Raman regime not satisfied",
                RuntimeWarning,
                stacklevel=3,
            )

    @cached_property
    def cavity_detuning(self) -> float:
        """``delta_cavity``, or the value resonant with S(+1/2) -> D(-1/2) when unset."""
        if self.delta_cavity is not None:
            return self.delta_cavity
        pair = zeeman_shift(S_PLUS, self.B_field, self.g_factors) - zeeman_shift(
            D_M1, self.B_field, self.g_factors
        )
        bare = self.delta_drive - pair
        if not self.stark_compensation or self.drive_polarization is Polarization.SIGMA_PLUS:
            return bare
        shift_s, shift_d = target_light_shifts(
            self.replace(delta_cavity=bare, stark_compensation=False)
        )
        return bare + shift_d - shift_s

    @property
    def dark_enabled(self) -> bool:
        return self.dark_decay_rate > 0

    @property
    def levels(self) -> tuple[AtomicLevel, ...]:
        return ALL_LEVELS if self.dark_enabled else ALL_LEVELS[:8]

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    @property
    def dim(self) -> int:
        return self.n_levels * self.fock_cutoff**2

    def replace(self, **changes) -> "SystemParams":
        return dataclasses.replace(self, **changes)

    def with_dark_level(self, rate: float | None = None) -> "SystemParams":
        """Enable the artificial dark level fed by S(-1/2)."""
        if rate is None:
            rate = 100.0 * effective_decay(self)
        return self.replace(dark_decay_rate=rate)

    @cached_property
    def ops(self) -> "Operators":
        return Operators(self)


def _as_polarization(value) -> Polarization:
    if isinstance(value, Polarization):
        return value
    if isinstance(value, str):
        return Polarization[value.upper()]
    return Polarization(value)


def dipole_amplitude(upper: AtomicLevel, lower: AtomicLevel, q: int) -> float:
    """Clebsch-Gordan amplitude <j_l m_l; 1 q | j_u m_u> of a P1/2 dipole transition.

    For a given upper sublevel the squared amplitudes summed over ``q`` and the
    sublevels of one lower manifold equal one.
    """
    if upper.manifold is not Manifold.P12:
        raise ValueError(f"upper level must be in P12, got {upper}")
    if lower.manifold not in (Manifold.S12, Manifold.D32):
        raise ValueError(f"lower level must be in S12 or D32, got {lower}")
    if q not in (-1, 0, 1):
        raise ValueError(f"polarisation index must be -1, 0 or +1, got {q}")
    for lev in (upper, lower):
        if abs(lev.m) > lev.manifold.j:
            raise ValueError(f"|m| out of range for {lev}")
    if upper.m - lower.m != q:
        return 0.0
    return clebsch_gordan(lower.manifold.j, lower.m, 1, q, upper.manifold.j, upper.m)


def zeeman_shift(lev: AtomicLevel, B: float, g_factors: dict) -> float:
    """Linear Zeeman shift g_J m mu_B B / hbar in rad/us."""
    if lev.manifold is Manifold.DARK:
        raise ValueError("the dark level has no Zeeman structure")
    return TWO_PI * g_factors[lev.manifold.value] * float(lev.m) * BOHR_MHZ_PER_T * B


def effective_rabi(params: SystemParams) -> float:
    """Raman Rabi frequency g0 * Omega_d / (2 |Delta_d|)."""
    if params.delta_drive == 0:
        raise ValueError("delta_drive must be non-zero")
    return params.g0 * params.omega_drive / (2.0 * abs(params.delta_drive))


def effective_decay(params: SystemParams) -> float:
    """Off-resonant scattering rate gamma * (Omega_d / (2 |Delta_d|))**2."""
    if params.delta_drive == 0:
        raise ValueError("delta_drive must be non-zero")
    return params.gamma_total * (params.omega_drive / (2.0 * abs(params.delta_drive))) ** 2


def cavity_kappa_from_geometry(length: float, finesse: float) -> float:
    """Field decay rate kappa (rad/us) such that 2*kappa/2pi = FSR / finesse."""
    if length <= 0 or finesse <= 0:
        raise ValueError("cavity length and finesse must be positive")
    fsr_mhz = SPEED_OF_LIGHT / (2.0 * length) * 1e-6
    return TWO_PI * fsr_mhz / finesse / 2.0


def raman_pairs(params: SystemParams) -> list[tuple[AtomicLevel, AtomicLevel]]:
    """(S, D) pairs linked by one drive photon and one cavity photon.

    The drive fixes the intermediate P sublevel (m_P = m_S + q); the cavity can
    emit any polarisation.  A pi drive gives the six resonances of the level scheme.
    """
    q = int(params.drive_polarization)
    pairs = []
    for s in (S_MINUS, S_PLUS):
        p = [x for x in (P_MINUS, P_PLUS) if x.m == s.m + q]
        if not p:
            continue
        pairs += [(s, d) for d in (D_M3, D_M1, D_P1, D_P3) if abs(p[0].m - d.m) <= 1]
    return pairs


def raman_resonance_offsets(params: SystemParams) -> list[float]:
    """delta_drive - delta_cavity placing each allowed (S, D) pair on two-photon resonance."""
    return [
        zeeman_shift(s, params.B_field, params.g_factors)
        - zeeman_shift(d, params.B_field, params.g_factors)
        for s, d in raman_pairs(params)
    ]


def cavity_mode_weights(p: AtomicLevel, d: AtomicLevel) -> tuple[float, float]:
    """Coupling amplitudes (mode 1, mode 2) of the P <-> D transition."""
    q = int(p.m - d.m)
    amp = dipole_amplitude(p, d, q)
    if q == 0:
        return amp, 0.0
    return 0.0, amp / np.sqrt(2.0)


def target_path(params: SystemParams) -> tuple[AtomicLevel, int]:
    """Intermediate P sublevel and cavity mode (1 or 2) of the S(+1/2) -> D(-1/2) path."""
    if params.drive_polarization is Polarization.SIGMA_PLUS:
        raise ValueError("a sigma+ drive cannot reach D(-1/2) from S(+1/2)")
    p = P_MINUS if params.drive_polarization is Polarization.SIGMA_MINUS else P_PLUS
    w1, w2 = cavity_mode_weights(p, D_M1)
    return p, (1 if abs(w1) > abs(w2) else 2)


def target_mode(params: SystemParams) -> int:
    return target_path(params)[1]


def _cavity_scale(params: SystemParams) -> float:
    # g0 is the coupling of the strongest cavity-coupled transition
    ref = max(
        max(map(abs, cavity_mode_weights(p, d)))
        for p in (P_MINUS, P_PLUS)
        for d in (D_M3, D_M1, D_P1, D_P3)
        if abs(p.m - d.m) <= 1
    )
    return params.g0 / ref


def cavity_coupling(params: SystemParams, p: AtomicLevel, d: AtomicLevel) -> tuple[float, float]:
    """Vacuum coupling (rad/us) of the P <-> D transition to modes 1 and 2."""
    g = _cavity_scale(params)
    w1, w2 = cavity_mode_weights(p, d)
    return g * w1, g * w2


class Operators:
    """Cached dense operators on the composite space of ``params``."""

    def __init__(self, params: SystemParams):
        n = params.fock_cutoff
        self.n_fock = n
        self.n_levels = params.n_levels
        self.dim = params.dim
        a = np.diag(np.sqrt(np.arange(1, n, dtype=float)), 1)
        eye_f = np.eye(n)
        eye_a = np.eye(self.n_levels)
        self.a1 = np.kron(eye_a, np.kron(a, eye_f)).astype(complex)
        self.a2 = np.kron(eye_a, np.kron(eye_f, a)).astype(complex)
        self.n1 = self.a1.conj().T @ self.a1
        self.n2 = self.a2.conj().T @ self.a2
        self._cavity_eye = np.eye(n * n)

    def transition(self, to: AtomicLevel, frm: AtomicLevel) -> np.ndarray:
        """|to><frm| tensored with the cavity identity."""
        s = np.zeros((self.n_levels, self.n_levels))
        s[to.index, frm.index] = 1.0
        return np.kron(s, self._cavity_eye).astype(complex)

    def projector(self, lev: AtomicLevel) -> np.ndarray:
        return self.transition(lev, lev)

    def basis_index(self, lev: AtomicLevel, n1: int = 0, n2: int = 0) -> int:
        return (lev.index * self.n_fock + n1) * self.n_fock + n2

    def level_weights(self) -> np.ndarray:
        """(n_levels, dim) 0/1 matrix mapping basis states to atomic levels."""
        w = np.zeros((self.n_levels, self.dim))
        for i in range(self.n_levels):
            w[i, i * self.n_fock**2:(i + 1) * self.n_fock**2] = 1.0
        return w


def diagonal_energies(params: SystemParams) -> dict[AtomicLevel, float]:
    """Bare rotating-frame energy of each atomic level (cavity photons cost nothing)."""
    energies = {}
    for lev in params.levels:
        if lev.manifold is Manifold.DARK:
            energies[lev] = 0.0
            continue
        z = zeeman_shift(lev, params.B_field, params.g_factors)
        if lev.manifold is Manifold.S12:
            energies[lev] = z
        elif lev.manifold is Manifold.P12:
            energies[lev] = params.delta_drive + z
        else:
            energies[lev] = params.delta_drive - params.cavity_detuning + z + params.raman_offset
    return energies


def build_hamiltonian(params: SystemParams, drive_on: bool = True) -> np.ndarray:
    """Rotating-frame Hamiltonian (rad/us) on the composite space."""
    ops = params.ops
    H = np.zeros((ops.dim, ops.dim), dtype=complex)
    for lev, e in diagonal_energies(params).items():
        H += e * ops.projector(lev)

    if drive_on:
        q = int(params.drive_polarization)
        for p in (P_MINUS, P_PLUS):
            for s in (S_MINUS, S_PLUS):
                amp = dipole_amplitude(p, s, q)
                if amp != 0.0:
                    H += 0.5 * params.omega_drive * amp * ops.transition(p, s)

    for p in (P_MINUS, P_PLUS):
        for d in (D_M3, D_M1, D_P1, D_P3):
            if abs(p.m - d.m) > 1:
                continue
            g1, g2 = cavity_coupling(params, p, d)
            sigma_plus = ops.transition(p, d)
            if g1:
                H += g1 * (ops.a1 @ sigma_plus)
            if g2:
                H += g2 * (ops.a2 @ sigma_plus)

    # add the hermitian conjugate of the off-diagonal couplings
    diag = np.diag(np.diag(H))
    off = H - diag
    return diag + off + off.conj().T


def target_light_shifts(params: SystemParams) -> tuple[float, float]:
    """Second-order light shifts of |S(+1/2), 0, 0> and |D(-1/2), one target photon>."""
    H = build_hamiltonian(params, drive_on=True)
    ops = params.ops
    mode = target_mode(params)
    i_s = ops.basis_index(S_PLUS)
    i_d = ops.basis_index(D_M1, 1, 0) if mode == 1 else ops.basis_index(D_M1, 0, 1)

    def shift(i):
        if ops.n_fock < 2 and i == i_d:
            return 0.0
        col = H[:, i].copy()
        col[i] = 0.0
        nz = np.nonzero(col)[0]
        return float(np.sum(np.abs(col[nz]) ** 2 / (H[i, i].real - H.diagonal()[nz].real)))

    return shift(i_s), (shift(i_d) if ops.n_fock >= 2 else 0.0)


@dataclass(frozen=True)
class CollapseOperator:
    """Jump operator with bookkeeping for the channel it represents."""

    op: np.ndarray
    channel: str  # CAVITY_MODE1, CAVITY_MODE2, FREE_SPACE_S, FREE_SPACE_D, DEPHASING, DARK_JUMP
    source: AtomicLevel | None = None
    target: AtomicLevel | None = None
    sink: bool = False  # keep the damping, discard the population that jumps


def build_collapse_operators(
    params: SystemParams,
    omit_decay_to: AtomicLevel | None = None,
    sink_decay_to: AtomicLevel | None = None,
) -> list[CollapseOperator]:
    """Cavity decay, spontaneous emission, drive dephasing and dark-level jump operators.

    ``omit_decay_to`` drops every spontaneous-emission channel ending in that
    level; ``sink_decay_to`` keeps those channels as loss only (see ``sink``).
    """
    ops = params.ops
    result = []
    if params.kappa > 0:
        rate = np.sqrt(2.0 * params.kappa)
        result.append(CollapseOperator(rate * ops.a1, "CAVITY_MODE1"))
        result.append(CollapseOperator(rate * ops.a2, "CAVITY_MODE2"))

    if params.gamma_total > 0:
        branches = {
            Manifold.S12: ("FREE_SPACE_S", params.gamma_total * (1.0 - params.branching_SD)),
            Manifold.D32: ("FREE_SPACE_D", params.gamma_total * params.branching_SD),
        }
        for p in (P_MINUS, P_PLUS):
            for lower in (S_MINUS, S_PLUS, D_M3, D_M1, D_P1, D_P3):
                if lower == omit_decay_to:
                    continue
                q = int(p.m - lower.m)
                if abs(q) > 1:
                    continue
                amp = dipole_amplitude(p, lower, q)
                if amp == 0.0:
                    continue
                name, rate = branches[lower.manifold]
                op = np.sqrt(rate) * amp * ops.transition(lower, p)
                result.append(CollapseOperator(op, name, source=p, target=lower,
                                               sink=lower == sink_decay_to))

    if params.drive_linewidth > 0:
        s_proj = ops.projector(S_MINUS) + ops.projector(S_PLUS)
        flip = 2.0 * s_proj - np.eye(ops.dim)
        # coherences between S and the other manifolds decay at drive_linewidth
        result.append(CollapseOperator(np.sqrt(params.drive_linewidth / 2.0) * flip, "DEPHASING"))

    if params.dark_enabled:
        op = np.sqrt(params.dark_decay_rate) * ops.transition(DARK, S_MINUS)
        result.append(CollapseOperator(op, "DARK_JUMP", source=S_MINUS, target=DARK))
    return result


def ground_state(params: SystemParams, pump_infidelity: float = 0.0) -> np.ndarray:
    """Density matrix of S(+1/2) with an optional S(-1/2) admixture, cavity empty."""
    ops = params.ops
    rho = np.zeros((ops.dim, ops.dim), dtype=complex)
    rho[ops.basis_index(S_PLUS), ops.basis_index(S_PLUS)] = 1.0 - pump_infidelity
    rho[ops.basis_index(S_MINUS), ops.basis_index(S_MINUS)] = pump_infidelity
    return rho
