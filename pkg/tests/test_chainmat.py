import math

import numpy as np
import pytest

from taylornet.chainmat import (
    Monomial,
    build_table,
    chain_table,
    eval_cells,
    eval_chain_matrix,
)

BELL = [1, 1, 2, 5, 15, 52, 203, 877, 4140, 21147, 115975]  # BELL[i] = B_i


def count_set_partitions(n):
    """Brute-force partition counter: place each element in an existing or new block."""

    def rec(elements, blocks):
        if not elements:
            return 1
        first, rest = elements[0], elements[1:]
        total = 0
        for i in range(len(blocks)):
            total += rec(rest, blocks[:i] + [blocks[i] + [first]] + blocks[i + 1 :])
        total += rec(rest, blocks + [[first]])
        return total

    return rec(list(range(n)), [])


def test_partition_counter_matches_known_bell_numbers():
    for n in range(1, 9):
        assert count_set_partitions(n) == BELL[n]


def test_all_ones_row_sums_are_bell_numbers():
    tab = build_table(10)
    ones = [1.0] * 10
    mat = eval_chain_matrix(tab, ones)
    for i in range(1, 11):
        row_sum = sum(mat[i - 1][: i])
        oracle = count_set_partitions(i) if i <= 8 else BELL[i]
        assert row_sum == oracle


def test_weight_and_degree_law():
    tab = build_table(10)
    for i in range(1, 11):
        for j in range(1, i + 1):
            cell = tab.cell(i, j)
            assert cell, f"cell ({i},{j}) empty"
            for m in cell:
                assert m.weight() == i
                assert m.degree() == j
                assert m.coefficient > 0


def test_row_three_matches_display():
    tab = build_table(3)
    assert tab.cell(3, 1) == (Monomial(1, ((3, 1),)),)
    assert tab.cell(3, 2) == (Monomial(3, ((1, 1), (2, 1))),)
    assert tab.cell(3, 3) == (Monomial(1, ((1, 3),)),)


def test_row_four_one_recurrence_step():
    tab = build_table(4)
    assert tab.cell(4, 1) == (Monomial(1, ((4, 1),)),)
    assert set(tab.cell(4, 2)) == {
        Monomial(4, ((1, 1), (3, 1))),
        Monomial(3, ((2, 2),)),
    }
    assert tab.cell(4, 3) == (Monomial(6, ((1, 2), (2, 1))),)
    assert tab.cell(4, 4) == (Monomial(1, ((1, 4),)),)


def test_order_one_table():
    tab = build_table(1)
    assert tab.cell(1, 1) == (Monomial(1, ((1, 1),)),)


def test_identity_function_gives_identity_matrix():
    tab = build_table(5)
    g = [1.0, 0.0, 0.0, 0.0, 0.0]
    mat = np.array(eval_chain_matrix(tab, g))
    np.testing.assert_allclose(mat, np.eye(5), atol=0.0)


def test_pure_scaling_gives_power_diagonal():
    tab = build_table(6)
    g = [2.0, 0.0, 0.0, 0.0, 0.0, 0.0]
    mat = np.array(eval_chain_matrix(tab, g))
    np.testing.assert_allclose(mat, np.diag([2.0**i for i in range(1, 7)]), atol=0.0)


def test_eval_with_arrays_is_elementwise():
    tab = build_table(4)
    g = [np.array([1.0, 2.0]), np.array([0.5, 0.0]), np.zeros(2), np.zeros(2)]
    cells = eval_cells(tab, g)
    # cell (3,2) = 3 g' g''
    np.testing.assert_allclose(cells[(3, 2)], [1.5, 0.0])
    np.testing.assert_allclose(cells[(2, 2)], [1.0, 4.0])


def test_order_limits():
    with pytest.raises(ValueError):
        build_table(0)
    with pytest.raises(ValueError):
        build_table(21)
    with pytest.raises(ValueError):
        eval_chain_matrix(build_table(3), [1.0, 1.0])


def test_cached_table_grows():
    t1 = chain_table(3)
    t2 = chain_table(5)
    assert t2.order >= 5
    assert chain_table(2).order >= 5  # reuses the bigger build


def test_dump_format():
    text = build_table(3).dump()
    lines = text.splitlines()
    assert lines[0] == "1 1 : 1 * g1"
    assert "3 2 : 3 * g1 g2" in lines
    assert "3 3 : 1 * g1^3" in lines


# ---------------------------------------------------------------------------
# composition property, checked against a local truncated-series oracle


def _series_compose(outer, inner, n):
    """Taylor coefficients of f(g(x)) at 0 from coefficient lists (c_k = deriv/k!).

    Plain power-series composition; requires inner[0] == 0 (series taken
    around the matching points), which the caller arranges.
    """
    assert abs(inner[0]) < 1e-300
    out = [0.0] * (n + 1)
    out[0] = outer[0]
    power = [0.0] * (n + 1)
    power[0] = 1.0
    for k in range(1, n + 1):
        # power <- power * inner, truncated
        nxt = [0.0] * (n + 1)
        for i, pi in enumerate(power):
            if pi == 0.0:
                continue
            for j, cj in enumerate(inner):
                if i + j > n:
                    break
                nxt[i + j] += pi * cj
        power = nxt
        for i in range(n + 1):
            out[i] += outer[k] * power[i]
    return out


def _derivs_from_series(coeffs):
    return [coeffs[k] * math.factorial(k) for k in range(1, len(coeffs))]


def test_composition_of_chain_matrices():
    n = 6
    rng = np.random.default_rng(7)
    tab = build_table(n)
    for _ in range(5):
        h_series = [0.0] + list(rng.uniform(-1.0, 1.0, n))
        g_series = [0.0] + list(rng.uniform(-1.0, 1.0, n))
        gh_series = _series_compose(g_series, h_series, n)
        M_h = np.array(eval_chain_matrix(tab, _derivs_from_series(h_series)))
        M_g = np.array(eval_chain_matrix(tab, _derivs_from_series(g_series)))
        M_gh = np.array(eval_chain_matrix(tab, _derivs_from_series(gh_series)))
        np.testing.assert_allclose(M_gh, M_h @ M_g, rtol=1e-10, atol=1e-10)
