import numpy as np
import pytest

from fedga import (InvalidConnectionError, banded_connection,
                   load_connection_csv, rho_mix_connection, validate_connection)


class TestValidateConnection:
    def test_accepts_uniform_matrix(self):
        K = 4
        C = np.full((K, K), 1.0 / K)
        conn = validate_connection(C)
        assert conn.size == K
        assert conn.lambda2 == pytest.approx(0.0, abs=1e-12)

    def test_single_client(self):
        conn = validate_connection(np.array([[1.0]]))
        assert conn.size == 1
        assert conn.lambda2 == 0.0

    def test_rejects_non_square(self):
        with pytest.raises(InvalidConnectionError, match="square"):
            validate_connection(np.ones((2, 3)) / 3)

    def test_rejects_asymmetric(self):
        C = np.array([[0.5, 0.5], [0.4, 0.6]])
        with pytest.raises(InvalidConnectionError, match="symmetric"):
            validate_connection(C)

    def test_rejects_bad_row_sum_naming_row(self):
        C = np.array([[0.5, 0.4], [0.4, 0.6]])
        with pytest.raises(InvalidConnectionError, match="row 0"):
            validate_connection(C)

    def test_rejects_negative_entries(self):
        C = np.array([[1.2, -0.2], [-0.2, 1.2]])
        with pytest.raises(InvalidConnectionError, match="negative"):
            validate_connection(C)

    def test_rejects_zero_diagonal(self):
        C = np.array([[0.0, 1.0], [1.0, 0.0]])
        with pytest.raises(InvalidConnectionError, match="diagonal"):
            validate_connection(C)

    def test_rejects_disconnected(self):
        with pytest.raises(InvalidConnectionError, match="disconnected"):
            validate_connection(np.eye(3))

    def test_entries_are_read_only(self):
        conn = validate_connection(np.full((3, 3), 1.0 / 3))
        with pytest.raises(ValueError):
            conn.entries[0, 0] = 2.0


class TestBandedConnection:
    def test_weights_and_row_sums(self):
        conn = banded_connection(10, 1)
        C = conn.entries
        assert np.allclose(C.sum(axis=1), 1.0)
        assert np.allclose(C, C.T)
        # each row holds exactly 2*bandwidth + 1 entries of 1/3
        assert np.allclose(C[C > 0], 1.0 / 3)
        assert (C[0] > 0).sum() == 3

    def test_wraparound_indexing(self):
        C = banded_connection(6, 1).entries
        assert C[0, 5] == pytest.approx(1.0 / 3)
        assert C[5, 0] == pytest.approx(1.0 / 3)

    def test_spectral_gap_below_one(self):
        conn = banded_connection(12, 2)
        assert 0.0 < conn.lambda2 < 1.0

    def test_too_small_K_raises(self):
        with pytest.raises(InvalidConnectionError, match="K=2"):
            banded_connection(2, 1)


class TestRhoMixConnection:
    @pytest.mark.parametrize("rho", [0.0, 0.3, 0.9])
    def test_second_eigenvalue_equals_rho(self, rho):
        conn = rho_mix_connection(8, rho)
        assert conn.lambda2 == pytest.approx(rho, abs=1e-10)

    def test_rho_zero_is_uniform(self):
        conn = rho_mix_connection(4, 0.0)
        assert np.allclose(conn.entries, 0.25)

    @pytest.mark.parametrize("rho", [-0.1, 1.0, 1.5])
    def test_invalid_rho_raises(self, rho):
        with pytest.raises(InvalidConnectionError):
            rho_mix_connection(4, rho)


def test_load_connection_csv_roundtrip(tmp_path):
    C = banded_connection(6, 1).entries
    path = tmp_path / "conn.csv"
    np.savetxt(path, C, delimiter=",")
    loaded = load_connection_csv(path)
    assert np.allclose(loaded.entries, C)


def test_load_connection_csv_rejects_invalid(tmp_path):
    path = tmp_path / "bad.csv"
    np.savetxt(path, np.eye(3), delimiter=",")
    with pytest.raises(InvalidConnectionError):
        load_connection_csv(path)
