from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import expm

from combqtt.observables import coherent_wigner, format_columns, wigner, write_columns
from combqtt.oracle import ladder
from combqtt.purified import ModeLayout, from_dense_psi, from_pure_product, telemetry
from combqtt.quantics import cat_state_qtt, coherent_state_qtt, fock_state_qtt


def _rho(tt):
    v = tt.to_dense()
    return np.outer(v, v.conj())


def _parity_wigner(rho, alpha, big=60):
    """Direct ``(2/pi) Tr[D P D^+ rho]`` in an enlarged Fock space."""
    n = rho.shape[0]
    a = ladder(big)
    D = expm(alpha * a.conj().T - np.conj(alpha) * a)
    P = np.diag((-1.0) ** np.arange(big))
    full = np.zeros((big, big), complex)
    full[:n, :n] = rho
    return (2 / np.pi) * np.trace(D @ P @ D.conj().T @ full)


def test_vacuum_peak():
    g = wigner(_rho(fock_state_qtt(0, 4)), (-1, 1), (-1, 1), 21)
    assert g.values[10, 10] == pytest.approx(2 / np.pi, abs=1e-14)
    assert g.values.max() == pytest.approx(2 / np.pi, abs=1e-14)


def test_fock_one_is_negative_at_origin():
    g = wigner(_rho(fock_state_qtt(1, 3)), (-1, 1), (-1, 1), 21)
    assert g.values[10, 10] == pytest.approx(-2 / np.pi, abs=1e-14)


def test_coherent_state_closed_form():
    beta = 1 + 1j
    g = wigner(_rho(coherent_state_qtt(beta, 6)), (-1, 3), (-1, 3), 41)
    assert np.abs(g.values - coherent_wigner(beta, g.re, g.im)).max() < 1e-6


@pytest.mark.parametrize("parity", [+1, -1])
def test_cat_parity_at_origin(parity):
    g = wigner(_rho(cat_state_qtt(2.0, 5, parity)), (-0.5, 0.5), (-0.5, 0.5), 11)
    assert g.values[5, 5] == pytest.approx(parity * 2 / np.pi, abs=1e-8)


def test_cat_closed_form():
    alpha = 2.0
    g = wigner(_rho(cat_state_qtt(alpha, 5)), (-3, 3), (-2, 2), 31)
    beta = g.re[None, :] + 1j * g.im[:, None]
    fringe = (4 / np.pi) * np.exp(-2 * np.abs(beta) ** 2) * np.cos(4 * alpha * beta.imag)
    exact = (coherent_wigner(alpha, g.re, g.im) + coherent_wigner(-alpha, g.re, g.im) + fringe) \
        / (2 * (1 + np.exp(-2 * alpha**2)))
    assert np.abs(g.values - exact).max() < 1e-6
    # fringes change sign between the two blobs
    col = g.values[:, 15]
    assert col.min() < -0.3 and col.max() > 0.6


def test_integral_matches_trace():
    g = wigner(_rho(cat_state_qtt(1.5, 5)), (-5, 5), (-5, 5), 101)
    assert 0.95 <= g.integral() <= 1.05
    g2 = wigner(0.5 * _rho(coherent_state_qtt(0.5, 4)), (-5, 5), (-5, 5), 81)
    assert 0.475 <= g2.integral() <= 0.525


@given(st.integers(0, 2**31 - 1), st.floats(-1.5, 1.5), st.floats(-1.5, 1.5))
def test_matches_displaced_parity(seed, x, y):
    rng = np.random.default_rng(seed)
    m = rng.normal(size=(6, 3)) + 1j * rng.normal(size=(6, 3))
    rho = m @ m.conj().T
    rho /= np.trace(rho)
    direct = _parity_wigner(rho, x + 1j * y)
    g = wigner(rho, (x, x), (y, y), 1)
    assert abs(direct.imag) < 1e-12
    assert abs(g.values[0, 0] - direct.real) < 1e-10
    assert g.values.dtype == np.float64


def test_purified_input_reduces_mode():
    lay = ModeLayout((3, 4), names=("a", "b"))
    s = from_pure_product([fock_state_qtt(1, 3), coherent_state_qtt(0.8, 4)], lay)
    g = wigner(s, (-2, 2), (-2, 2), 9, mode="b")
    assert np.abs(g.values - coherent_wigner(0.8, g.re, g.im)).max() < 1e-7
    g0 = wigner(s, (0, 0), (0, 0), 1, mode=0)
    assert g0.values[0, 0] == pytest.approx(-2 / np.pi, abs=1e-12)


def test_rejects_non_square():
    with pytest.raises(ValueError):
        wigner(np.zeros((3, 4)))


def test_write_and_sidecar(tmp_path):
    g = wigner(_rho(fock_state_qtt(0, 3)), (-1, 1), (-2, 2), (3, 5))
    path = g.write(tmp_path / "w.dat")
    lines = path.read_text().splitlines()
    assert lines[0] == "# re im W"
    assert len(lines) == 1 + 15
    meta = json.loads((tmp_path / "w.dat.json").read_text())
    assert meta["shape"] == [5, 3]
    assert meta["re_range"] == [-1.0, 1.0]
    assert meta["max"] == pytest.approx(2 / np.pi)


def test_format_columns_round_trips_doubles(tmp_path):
    x = np.array([np.pi, 1 / 3, -1e-300, 2.0**60])
    text = format_columns({"t": np.arange(4.0), "x": x})
    assert text.splitlines()[0] == "# t x"
    back = np.loadtxt(write_columns(tmp_path / "c.dat", [("t", np.arange(4.0)), ("x", x)]))
    assert np.array_equal(back[:, 1], x)


def test_format_columns_length_mismatch():
    with pytest.raises(ValueError):
        format_columns({"a": [1.0, 2.0], "b": [1.0]})


def test_telemetry_product_and_mixture():
    t = telemetry(from_pure_product([fock_state_qtt(2, 3)]))
    assert (t["chi_q"], t["chi_mu"]) == (1, 1)
    assert t["purity"] == pytest.approx(1.0)
    psi = np.zeros((8, 2), complex)
    psi[0, 0] = psi[5, 1] = np.sqrt(0.5)
    t = telemetry(from_dense_psi(psi, ModeLayout((3,))))
    assert t["chi_mu"] == 2
    assert t["purity"] == pytest.approx(0.5)
    assert t["trace"] == pytest.approx(1.0)
    assert t["elements"] > 0
