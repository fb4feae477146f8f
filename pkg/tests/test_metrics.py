import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meirl.errors import ConfigError
from meirl.kinematics import PastTrack
from meirl.mdp import GridWorld, Policy, uniform_policy
from meirl.metrics import (EvalResult, cells_to_xy, export_csv, export_json,
                           hausdorff, mean_sampled_hd, nll, terminal_entropy)
from meirl.synthetic import Demonstration

LN4 = math.log(4.0)


def grid(rows=8, cols=8, res=1.0, seed=0):
    rng = np.random.default_rng(seed)
    return GridWorld(rows=rows, cols=cols, resolution=res,
                     env=rng.random((5, rows, cols)))


def demo_from_future(world, future, speed=4.0, tag="straight"):
    """Wrap a future cell path in a Demonstration with a short synthetic past
    approaching the start cell from the left at constant speed."""
    future = np.asarray(future, dtype=np.int64)
    cx = (future[0, 1] + 0.5) * world.resolution
    cy = (future[0, 0] + 0.5) * world.resolution
    t = np.array([0.0, 0.1, 0.2])
    xy = np.array([[cx - 0.2 * speed, cy], [cx - 0.1 * speed, cy], [cx, cy]])
    return Demonstration(world=world, past=PastTrack(t=t, xy=xy), future=future,
                         expert_speed=speed, seed=0, tag=tag)


def deterministic_policy(rows, cols, action):
    probs = np.zeros((4, rows, cols))
    probs[action] = 1.0
    return Policy(probs=probs)


def straight_future(row, c0, n):
    return [(row, c0 + k) for k in range(n)]


# ---------------------------------------------------------------------------
# coordinate convention

def test_cells_to_xy_convention():
    xy = cells_to_xy(np.array([[2, 5]]), resolution=0.5)
    assert np.allclose(xy, [[2.75, 1.25]])  # x from col, y from row


def test_cells_to_xy_half_cell_offset():
    xy = cells_to_xy(np.array([[0, 0]]), resolution=2.0)
    assert np.allclose(xy, [[1.0, 1.0]])


# ---------------------------------------------------------------------------
# NLL

@pytest.mark.parametrize("n_cells", [2, 5, 15, 26, 40])
def test_nll_uniform_is_ln4_exactly(n_cells):
    w = grid(rows=8, cols=44)
    demo = demo_from_future(w, straight_future(3, 1, n_cells))
    assert nll(uniform_policy(8, 44), demo) == LN4


def test_nll_deterministic_match_is_zero():
    w = grid()
    demo = demo_from_future(w, straight_future(3, 1, 5))
    policy = deterministic_policy(8, 8, 3)  # always "right"
    assert nll(policy, demo) == 0.0


def test_nll_zero_probability_step_is_inf():
    w = grid()
    demo = demo_from_future(w, straight_future(3, 1, 5))
    probs = np.full((4, 8, 8), 0.25)
    probs[:, 3, 2] = [1.0, 0.0, 0.0, 0.0]  # demo moves right from (3,2)
    assert nll(Policy(probs=probs), demo) == float("inf")


def test_nll_mixed_probabilities():
    w = grid()
    demo = demo_from_future(w, straight_future(3, 1, 3))
    probs = np.full((4, 8, 8), 0.25)
    probs[:, 3, 1] = [0.1, 0.1, 0.1, 0.7]
    probs[:, 3, 2] = [0.2, 0.2, 0.2, 0.4]
    expected = -(math.log(0.7) + math.log(0.4)) / 2.0
    assert nll(Policy(probs=probs), demo) == pytest.approx(expected, abs=1e-12)


def test_nll_single_cell_future_rejected():
    w = grid()
    demo = demo_from_future(w, straight_future(3, 1, 2))
    demo.future = demo.future[:1]  # bypass construction check
    with pytest.raises(ConfigError):
        nll(uniform_policy(8, 8), demo)


# ---------------------------------------------------------------------------
# Hausdorff distance

def test_hausdorff_identical_sets_zero():
    a = np.array([[0.0, 0.0], [1.0, 2.0], [3.0, 1.0]])
    assert hausdorff(a, a) == 0.0


def test_hausdorff_parallel_offset():
    a = np.array([[float(k), 0.0] for k in range(6)])
    b = a + np.array([0.0, 0.75])
    assert hausdorff(a, b) == pytest.approx(0.75, abs=1e-12)


def test_hausdorff_dominated_by_far_point():
    a = np.array([[0.0, 0.0], [1.0, 0.0]])
    b = np.vstack([a, [[5.0, 0.0]]])
    # directed a->b is 0, the far extra point sets the symmetric value
    assert hausdorff(a, b) == pytest.approx(4.0, abs=1e-12)


def test_hausdorff_matches_quadratic_oracle():
    rng = np.random.default_rng(7)
    for _ in range(10):
        a = rng.normal(size=(20, 2)) * 3.0
        b = rng.normal(size=(15, 2)) * 3.0

        def directed(p, q):
            return max(min(math.dist(x, y) for y in q) for x in p)

        expected = max(directed(a, b), directed(b, a))
        assert hausdorff(a, b) == pytest.approx(expected, abs=1e-12)


def test_hausdorff_bad_shapes_rejected():
    good = np.zeros((3, 2))
    with pytest.raises(ConfigError):
        hausdorff(good, np.zeros(4))
    with pytest.raises(ConfigError):
        hausdorff(np.zeros((3, 3)), good)
    with pytest.raises(ConfigError):
        hausdorff(good, np.zeros((0, 2)))


points = st.lists(
    st.tuples(st.floats(-50, 50, allow_nan=False), st.floats(-50, 50, allow_nan=False)),
    min_size=1, max_size=12,
).map(lambda pts: np.array(pts, dtype=np.float64))


@settings(max_examples=60, deadline=None)
@given(a=points, b=points)
def test_hausdorff_symmetry(a, b):
    assert hausdorff(a, b) == hausdorff(b, a)


@settings(max_examples=60, deadline=None)
@given(a=points, b=points, c=points)
def test_hausdorff_triangle_inequality(a, b, c):
    assert hausdorff(a, c) <= hausdorff(a, b) + hausdorff(b, c) + 1e-9


# ---------------------------------------------------------------------------
# sampled HD and terminal entropy

def test_mean_sampled_hd_deterministic_policy_zero():
    w = grid()
    demo = demo_from_future(w, straight_future(3, 1, 5))
    policy = deterministic_policy(8, 8, 3)
    assert mean_sampled_hd(policy, demo, n_samples=20) == 0.0


def test_mean_sampled_hd_seeded():
    w = grid()
    demo = demo_from_future(w, straight_future(3, 1, 5))
    policy = uniform_policy(8, 8)
    a = mean_sampled_hd(policy, demo, n_samples=50, seed=3)
    b = mean_sampled_hd(policy, demo, n_samples=50, seed=3)
    c = mean_sampled_hd(policy, demo, n_samples=50, seed=4)
    assert a == b
    assert a > 0.0
    assert a != c


def test_terminal_entropy_deterministic_zero():
    policy = deterministic_policy(8, 8, 3)
    assert terminal_entropy(policy, (3, 1), 4) == 0.0


def test_terminal_entropy_uniform_one_step():
    # four equally likely neighbors from an interior cell
    policy = uniform_policy(9, 9)
    assert terminal_entropy(policy, (4, 4), 1) == LN4


def test_terminal_entropy_spreads_with_horizon():
    policy = uniform_policy(17, 17)
    e1 = terminal_entropy(policy, (8, 8), 1)
    e5 = terminal_entropy(policy, (8, 8), 5)
    assert e5 > e1


# ---------------------------------------------------------------------------
# aggregation and export

def test_eval_result_summary_means_and_se():
    r = EvalResult(method="ours", hd_per_demo=[1.0, 2.0, 3.0],
                   nll_per_demo=[0.5, 0.7, 0.6], terminal_entropies=[1.0, 1.0, 1.0])
    s = r.summary()
    assert s["hd"] == pytest.approx(2.0)
    assert s["hd_se"] == pytest.approx(1.0 / math.sqrt(3.0))
    assert s["nll"] == pytest.approx(0.6)
    assert s["n_demos"] == 3
    assert s["n_infinite_nll"] == 0
    assert s["terminal_entropy"] == pytest.approx(1.0)


def test_eval_result_counts_infinite_nll():
    r = EvalResult(method="bc", hd_per_demo=[1.0, 1.0],
                   nll_per_demo=[0.5, float("inf")])
    assert r.n_infinite_nll == 1
    assert math.isinf(r.summary()["nll"])


def test_eval_result_ekf_has_no_nll():
    r = EvalResult(method="ekf", hd_per_demo=[2.0])
    s = r.summary()
    assert s["nll"] is None and s["nll_se"] is None
    assert s["n_infinite_nll"] == 0


def test_eval_result_single_demo_zero_se():
    s = EvalResult(method="ours", hd_per_demo=[1.5], nll_per_demo=[0.4]).summary()
    assert s["hd_se"] == 0.0 and s["nll_se"] == 0.0


def test_eval_result_validation():
    with pytest.raises(ConfigError):
        EvalResult(method="ours", hd_per_demo=[])
    with pytest.raises(ConfigError):
        EvalResult(method="ours", hd_per_demo=[-0.1])
    with pytest.raises(ConfigError):
        EvalResult(method="ours", hd_per_demo=[1.0, 2.0], nll_per_demo=[0.5])


def table_rows():
    mk = lambda m, with_nll=True: EvalResult(
        method=m, hd_per_demo=[1.0, 2.0],
        nll_per_demo=[0.5, 0.6] if with_nll else None,
        terminal_entropies=[0.9, 1.1])
    # deliberately scrambled insertion order
    return [mk("ours"), mk("random"), mk("ekf", with_nll=False), mk("bc"),
            mk("irl_nokin")]


def test_export_csv_row_order_and_na(tmp_path):
    path = tmp_path / "table.csv"
    export_csv(table_rows(), path)
    lines = path.read_text().splitlines()
    header = lines[0].split(",")
    assert header[0] == "method"
    methods = [ln.split(",")[0] for ln in lines[1:]]
    assert methods == ["ekf", "bc", "random", "irl_nokin", "ours"]
    ekf = dict(zip(header, lines[1].split(",")))
    assert ekf["nll"] == "N.A." and ekf["nll_se"] == "N.A."
    assert path.read_text().endswith("\n")


def test_export_csv_byte_deterministic(tmp_path):
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    export_csv(table_rows(), p1)
    export_csv(table_rows(), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_export_csv_duplicate_method_rejected(tmp_path):
    rows = table_rows() + [EvalResult(method="ours", hd_per_demo=[1.0])]
    with pytest.raises(ConfigError):
        export_csv(rows, tmp_path / "dup.csv")


def test_export_json_round_trip(tmp_path):
    path = tmp_path / "table.json"
    export_json(table_rows(), path)
    with open(path) as f:
        data = json.load(f)
    assert [m["method"] for m in data["methods"]] == \
        ["ekf", "bc", "random", "irl_nokin", "ours"]
    assert data["methods"][0]["nll"] is None
    assert data["methods"][4]["nll"] == pytest.approx(0.55)


def test_export_unknown_method_sorts_after_known(tmp_path):
    rows = table_rows() + [EvalResult(method="zzz", hd_per_demo=[1.0],
                                      nll_per_demo=[0.5])]
    path = tmp_path / "extra.csv"
    export_csv(rows, path)
    methods = [ln.split(",")[0] for ln in path.read_text().splitlines()[1:]]
    assert methods == ["ekf", "bc", "random", "irl_nokin", "ours", "zzz"]
