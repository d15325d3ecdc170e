import numpy as np
import pytest

from skillstream.routing import (BankFullError, SemanticBank, route,
                                 route_batch)


def unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def e(i, dim=8):
    v = np.zeros(dim)
    v[i] = 1.0
    return v


def test_empty_bank_claims_row_zero():
    bank = SemanticBank(capacity=4, dim=8)
    d = route(e(0), bank)
    assert d.skill_code == 0 and d.is_new
    assert np.array_equal(bank.rows[0], e(0))
    assert bank.occupancy == 1


def test_exact_match_is_fixed_point():
    bank = SemanticBank(capacity=4, dim=8)
    route(e(0), bank)
    before = bank.rows.copy()
    d = route(e(0), bank)
    assert d.skill_code == 0 and not d.is_new
    assert d.similarity == pytest.approx(1.0)
    assert bank.rows.tobytes() == before.tobytes()


def test_below_threshold_claims_new_row():
    bank = SemanticBank(capacity=4, dim=8)
    route(e(0), bank)
    v = unit([0.6, 0.8, 0, 0, 0, 0, 0, 0])
    d = route(v, bank)   # cosine 0.6 < 0.8
    assert d.is_new and d.skill_code == 1
    assert d.similarity == pytest.approx(0.6)
    assert np.allclose(bank.rows[1], v)


def test_moving_average_update_hand_example():
    bank = SemanticBank(capacity=4, dim=8)
    route(e(0), bank)
    v = unit([0.9, np.sqrt(1 - 0.81), 0, 0, 0, 0, 0, 0])
    d = route(v, bank)   # cosine 0.9 > 0.8 -> row 0 updated
    assert d.skill_code == 0 and not d.is_new
    expected0 = 0.1 * 1.0 + 0.9 * 0.9
    expected1 = 0.9 * np.sqrt(1 - 0.81)
    assert abs(bank.rows[0][0] - expected0) < 1e-12
    assert abs(bank.rows[0][1] - expected1) < 1e-12
    assert abs(bank.rows[0][1] - 0.3923009049186606) < 1e-12


def test_equality_with_threshold_opens_new_row():
    bank = SemanticBank(capacity=4, dim=8, threshold=0.8)
    route(e(0), bank)
    v = unit([0.8, 0.6, 0, 0, 0, 0, 0, 0])  # cosine exactly 0.8
    d = route(v, bank)
    assert d.is_new and d.skill_code == 1


def test_decision_scale_invariant_without_update():
    bank = SemanticBank(capacity=4, dim=8)
    route(e(0), bank)
    route(unit([0, 1, 0, 0, 0, 0, 0, 0]), bank)
    probe = unit([0.95, 0.3122, 0, 0, 0, 0, 0, 0])
    d1 = route(probe, bank, update=False)
    d2 = route(7.5 * probe, bank, update=False)
    assert (d1.skill_code, d1.is_new) == (d2.skill_code, d2.is_new)
    assert d1.similarity == pytest.approx(d2.similarity)


def test_capacity_error_when_full_and_unmatched():
    bank = SemanticBank(capacity=2, dim=8)
    route(e(0), bank)
    route(e(1), bank)
    with pytest.raises(BankFullError):
        route(e(2), bank)


def test_occupancy_monotone_and_rows_zero_beyond():
    bank = SemanticBank(capacity=6, dim=8)
    occ = [0]
    for i in range(4):
        route(e(i), bank)
        assert bank.occupancy >= occ[-1]
        occ.append(bank.occupancy)
        assert np.all(bank.rows[bank.occupancy:] == 0.0)


def test_norm_drift_bounded_by_one():
    rng = np.random.default_rng(0)
    bank = SemanticBank(capacity=8, dim=16)
    base = unit(rng.standard_normal(16))
    route(base, bank)
    for _ in range(300):
        v = unit(base + 0.05 * rng.standard_normal(16))
        route(v, bank)
    norms = np.linalg.norm(bank.rows[:bank.occupancy], axis=1)
    assert np.all(norms <= 1.0 + 1e-9)


def test_routing_stored_row_is_bitwise_fixed_point():
    rng = np.random.default_rng(1)
    bank = SemanticBank(capacity=4, dim=16)
    base = unit(rng.standard_normal(16))
    route(base, bank)
    route(unit(base + 0.05 * rng.standard_normal(16)), bank)  # row norm < 1 now
    before = bank.rows.tobytes()
    d = route(bank.rows[0].copy(), bank)   # the exact stored row
    assert d.skill_code == 0 and not d.is_new
    assert bank.rows.tobytes() == before


def test_read_only_routing_never_mutates():
    bank = SemanticBank(capacity=4, dim=8)
    route(e(0), bank)
    before = bank.rows.tobytes()
    route(unit([0.9, np.sqrt(0.19), 0, 0, 0, 0, 0, 0]), bank, update=False)
    route(e(3), bank, update=False)   # unmatched: falls back, no allocation
    assert bank.rows.tobytes() == before
    assert bank.occupancy == 1


def test_read_only_empty_bank_is_error():
    bank = SemanticBank(capacity=4, dim=8)
    with pytest.raises(BankFullError):
        route(e(0), bank, update=False)


def test_batch_routes_sequentially():
    bank = SemanticBank(capacity=4, dim=8)
    ds = route_batch([e(0), e(0), e(1)], bank)
    assert [d.skill_code for d in ds] == [0, 0, 1]
    assert [d.is_new for d in ds] == [True, False, True]


def test_threshold_validated():
    with pytest.raises(ValueError, match="threshold"):
        SemanticBank(capacity=4, dim=8, threshold=1.5)
