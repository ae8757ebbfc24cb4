import json
import warnings
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ioncavity.model import (
    ALL_LEVELS,
    DARK,
    D_M1,
    D_M3,
    D_P1,
    D_P3,
    P_MINUS,
    P_PLUS,
    S_MINUS,
    S_PLUS,
    TWO_PI,
    Manifold,
    Polarization,
    SystemParams,
    build_collapse_operators,
    build_hamiltonian,
    cavity_kappa_from_geometry,
    diagonal_energies,
    dipole_amplitude,
    effective_decay,
    effective_rabi,
    level,
    mhz,
    raman_resonance_offsets,
    target_path,
    zeeman_shift,
)

FIXTURES = Path(__file__).parent / "fixtures"
LOWER = (S_MINUS, S_PLUS, D_M3, D_M1, D_P1, D_P3)


def test_levels_form_a_basis():
    assert [lev.index for lev in ALL_LEVELS] == list(range(9))
    assert {lev.manifold for lev in ALL_LEVELS} == set(Manifold)
    assert level(Manifold.D32, Fraction(-1, 2)) is D_M1
    assert S_PLUS.label == "S12_p1_2"


def test_dimension_with_and_without_dark_level():
    p = SystemParams()
    assert p.dim == 8 * 9
    assert p.with_dark_level().dim == 9 * 9
    assert SystemParams(fock_cutoff=2).dim == 8 * 4


def test_dipole_amplitudes_match_wigner_fixture():
    rows = json.loads((FIXTURES / "dipole_amplitudes.json").read_text())
    for row in rows:
        upper = level(Manifold.P12, Fraction(row["upper_m"]))
        lower = level(Manifold[row["lower"]], Fraction(row["lower_m"]))
        assert dipole_amplitude(upper, lower, row["q"]) == pytest.approx(row["value"], abs=1e-14)


def test_dipole_selection_rule_and_normalisation():
    assert dipole_amplitude(P_PLUS, S_PLUS, -1) == 0.0
    for upper in (P_MINUS, P_PLUS):
        for manifold in (Manifold.S12, Manifold.D32):
            total = sum(dipole_amplitude(upper, low, q) ** 2
                        for low in LOWER if low.manifold is manifold for q in (-1, 0, 1))
            assert total == pytest.approx(1.0, abs=1e-12)


@given(st.sampled_from((P_MINUS, P_PLUS)), st.sampled_from(LOWER), st.sampled_from((-1, 0, 1)))
def test_selection_rule_property(upper, lower, q):
    if upper.m - lower.m != q:
        assert dipole_amplitude(upper, lower, q) == 0.0


def test_dipole_domain_errors():
    with pytest.raises(ValueError):
        dipole_amplitude(S_PLUS, P_PLUS, 0)
    with pytest.raises(ValueError):
        dipole_amplitude(P_PLUS, P_MINUS, 1)
    with pytest.raises(ValueError):
        dipole_amplitude(P_PLUS, S_PLUS, 2)


def test_zeeman_shifts():
    g = SystemParams().g_factors
    assert zeeman_shift(S_PLUS, 0.0, g) == 0.0
    # hand arithmetic: 2 x 1/2 x 13.996 GHz/T x 0.2 mT = 2.80 MHz
    assert zeeman_shift(S_PLUS, 0.2e-3, {**g, "S12": 2.0}) / TWO_PI == pytest.approx(2.7992, abs=5e-4)
    assert zeeman_shift(D_M1, 0.2e-3, {**g, "D32": 0.8}) / TWO_PI == pytest.approx(-1.11970, abs=5e-4)
    with pytest.raises(ValueError):
        zeeman_shift(DARK, 0.2e-3, g)


def test_effective_parameters():
    p = SystemParams()
    # hand arithmetic: 1.6 MHz x 30 / (2 x 335) = 71.64 kHz
    assert effective_rabi(p) / TWO_PI * 1e3 == pytest.approx(1.6e3 * 30 / 670, rel=1e-12)
    assert effective_decay(p) == pytest.approx(p.gamma_total * (30 / 670) ** 2, rel=1e-12)
    off = p.replace(omega_drive=0.0)
    assert effective_rabi(off) == 0.0 and effective_decay(off) == 0.0
    far = p.replace(delta_drive=2 * p.delta_drive)
    assert effective_rabi(far) == pytest.approx(effective_rabi(p) / 2)
    assert effective_decay(far) == pytest.approx(effective_decay(p) / 4)
    with pytest.raises(ValueError), pytest.warns(RuntimeWarning):
        effective_rabi(p.replace(delta_drive=0.0))


def test_cavity_kappa_from_geometry():
    k = cavity_kappa_from_geometry(0.02, 70_000)
    assert 2 * k / TWO_PI == pytest.approx(0.10707, rel=1e-3)
    assert cavity_kappa_from_geometry(0.02, 140_000) == pytest.approx(k / 2)
    assert cavity_kappa_from_geometry(0.04, 70_000) == pytest.approx(k / 2)
    with pytest.raises(ValueError):
        cavity_kappa_from_geometry(0.0, 70_000)
    with pytest.raises(ValueError):
        cavity_kappa_from_geometry(0.02, -1)


def test_raman_offsets():
    p = SystemParams()
    assert len(raman_resonance_offsets(p)) == 6
    assert raman_resonance_offsets(p.replace(B_field=0.0)) == pytest.approx([0.0] * 6)
    flipped = raman_resonance_offsets(p.replace(B_field=-p.B_field))
    assert flipped == pytest.approx([-x for x in raman_resonance_offsets(p)])
    g = p.g_factors
    target = zeeman_shift(S_PLUS, p.B_field, g) - zeeman_shift(D_M1, p.B_field, g)
    assert target / TWO_PI == pytest.approx(2.80 + 1.12, abs=0.01)
    assert any(o == pytest.approx(target) for o in raman_resonance_offsets(p))


def _hermitian(h):
    return np.max(np.abs(h - h.conj().T)) <= 1e-12 * max(np.max(np.abs(h)), 1.0)


@settings(max_examples=25, deadline=None)
@given(
    st.floats(0.0, 5.0), st.floats(0.0, 60.0), st.floats(100.0, 600.0), st.floats(-0.5, 0.5),
    st.sampled_from(list(Polarization)), st.booleans(), st.booleans(),
)
def test_hamiltonian_hermitian(g0, omega, delta, offset, pol, drive_on, dark):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        p = SystemParams(g0=mhz(g0), omega_drive=mhz(omega), delta_drive=mhz(delta),
                         raman_offset=mhz(offset), drive_polarization=pol, stark_compensation=False,
                         delta_cavity=mhz(delta))
        if dark:
            p = p.with_dark_level(1.0)
    assert _hermitian(build_hamiltonian(p, drive_on=drive_on))


def test_uncoupled_hamiltonian_is_diagonal():
    p = SystemParams(g0=0.0)
    h = build_hamiltonian(p, drive_on=False)
    assert np.count_nonzero(h - np.diag(np.diag(h))) == 0
    energies = diagonal_energies(p)
    ops = p.ops
    for lev, e in energies.items():
        assert h[ops.basis_index(lev), ops.basis_index(lev)].real == pytest.approx(e)


def test_bare_two_photon_detuning_equals_raman_offset():
    p = SystemParams(stark_compensation=False)
    p_level, mode = target_path(p)
    h = build_hamiltonian(p, drive_on=False)
    ops = p.ops
    photon = (1, 0) if mode == 1 else (0, 1)
    e_s = h[ops.basis_index(S_PLUS), ops.basis_index(S_PLUS)].real
    e_d = h[ops.basis_index(D_M1, *photon), ops.basis_index(D_M1, *photon)].real
    assert e_d - e_s == pytest.approx(p.raman_offset, abs=1e-9)


def test_drive_polarisation_selects_drive_entries():
    def drive_pattern(pol):
        p = SystemParams(drive_polarization=pol, g0=0.0, stark_compensation=False, delta_cavity=mhz(335.0))
        h = build_hamiltonian(p, drive_on=True) - build_hamiltonian(p, drive_on=False)
        return np.abs(h) > 0

    patterns = [drive_pattern(pol) for pol in Polarization]
    assert all(pat.any() for pat in patterns)
    assert not np.array_equal(patterns[0], patterns[1])
    assert not np.array_equal(patterns[1], patterns[2])


def test_no_collapse_operators_without_dissipation():
    p = SystemParams(kappa=0.0, gamma_total=0.0, drive_linewidth=0.0)
    assert build_collapse_operators(p) == []


@pytest.mark.parametrize("branching", [0.064, 0.3])
def test_decay_conservation(branching):
    p = SystemParams(branching_SD=branching)
    ops = p.ops
    atomic = [c for c in build_collapse_operators(p) if c.channel.startswith("FREE_SPACE")]
    total = sum(c.op.conj().T @ c.op for c in atomic)
    for upper in (P_MINUS, P_PLUS):
        i = ops.basis_index(upper)
        assert total[i, i].real == pytest.approx(p.gamma_total, rel=1e-12)
    d_total = sum(c.op.conj().T @ c.op for c in atomic if c.channel == "FREE_SPACE_D")
    assert d_total[ops.basis_index(P_PLUS), ops.basis_index(P_PLUS)].real == pytest.approx(p.gamma_total * branching)


def test_dark_level_jump_operator():
    p = SystemParams().with_dark_level()
    dark_ops = [c for c in build_collapse_operators(p) if c.channel == "DARK_JUMP"]
    assert len(dark_ops) == 1
    assert dark_ops[0].source == S_MINUS and dark_ops[0].target == DARK
    assert p.dark_decay_rate == pytest.approx(100 * effective_decay(p))


def test_parameter_validation():
    with pytest.raises(ValueError):
        SystemParams(branching_SD=1.5)
    with pytest.raises(ValueError):
        SystemParams(fock_cutoff=0)
    with pytest.raises(ValueError):
        SystemParams(kappa=-1.0)
    with pytest.warns(RuntimeWarning, match="off-resonant"):
        SystemParams(delta_drive=mhz(5.0), delta_cavity=mhz(5.0))
