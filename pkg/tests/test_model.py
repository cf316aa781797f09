import json

import numpy as np
import pytest

from onelayer import condition_numbers, generate_teacher, get_activation, sample
from onelayer.model import (
    ConditioningError,
    DimensionError,
    TeacherNetwork,
    load_samples,
    load_teacher,
    save_samples,
    save_teacher,
)


def jacobi_singular_values(A, sweeps=60, tol=1e-14):
    """One-sided Jacobi SVD, the brute-force oracle for singular values."""
    A = np.array(A, dtype=float)
    n = A.shape[1]
    for _ in range(sweeps):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[:, p] @ A[:, q]
                app = A[:, p] @ A[:, p]
                aqq = A[:, q] @ A[:, q]
                off = max(off, abs(apq) / max(np.sqrt(app * aqq), 1e-300))
                if abs(apq) < tol * np.sqrt(app * aqq):
                    continue
                tau = (aqq - app) / (2.0 * apq)
                t = np.sign(tau) / (abs(tau) + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                Ap = c * A[:, p] - s * A[:, q]
                Aq = s * A[:, p] + c * A[:, q]
                A[:, p], A[:, q] = Ap, Aq
        if off < tol:
            break
    return np.sort(np.linalg.norm(A, axis=0))[::-1]


def test_prescribed_singular_values():
    teacher = generate_teacher(10, 5, 2.0, seed=3)
    sv = np.linalg.svd(teacher.W, compute_uv=False)
    assert np.allclose(np.sort(sv), [1.0, 1.25, 1.5, 1.75, 2.0], atol=1e-9)


def test_k1_unit_column():
    teacher = generate_teacher(3, 1, 1.0, seed=5)
    assert teacher.W.shape == (3, 1)
    assert abs(np.linalg.norm(teacher.W[:, 0]) - 1.0) < 1e-12
    # kappa is irrelevant at k = 1
    teacher2 = generate_teacher(3, 1, 7.0, seed=5)
    assert abs(np.linalg.norm(teacher2.W[:, 0]) - 1.0) < 1e-12


def test_singular_values_against_jacobi_oracle():
    teacher = generate_teacher(4, 2, 3.0, seed=9)
    sv = jacobi_singular_values(teacher.W)
    assert np.allclose(sv, [3.0, 1.0], atol=1e-10)


def test_dimension_errors():
    with pytest.raises(DimensionError):
        generate_teacher(3, 4, 2.0, seed=0)
    with pytest.raises(DimensionError):
        generate_teacher(3, 0, 2.0, seed=0)
    with pytest.raises(ValueError):
        generate_teacher(3, 2, 0.5, seed=0)


def test_sign_vector_entries():
    teacher = generate_teacher(6, 4, 2.0, seed=1)
    assert set(np.unique(teacher.v)) <= {-1.0, 1.0}


def test_sample_relu_positive():
    act = get_activation("relu")
    W = np.zeros((4, 1))
    W[0, 0] = 1.0
    teacher = TeacherNetwork(W=W, v=np.array([1.0]), activation=act, kappa=1.0, seed=0)
    x = np.zeros((4, 1))
    x[0, 0] = 2.0
    assert teacher.predict(x)[0] == 2.0


def test_sample_squared_relu_negative_preactivation():
    act = get_activation("squared_relu")
    W = np.zeros((3, 1))
    W[0, 0] = 1.0
    teacher = TeacherNetwork(W=W, v=np.array([-1.0]), activation=act, kappa=1.0, seed=0)
    x = np.zeros((3, 1))
    x[0, 0] = -3.0
    assert teacher.predict(x)[0] == 0.0


def test_sample_two_term_hand_sum():
    act = get_activation("squared_relu")
    W = np.array([[1.0, 0.5], [0.0, 0.5]])
    v = np.array([1.0, -1.0])
    teacher = TeacherNetwork(W=W, v=v, activation=act, kappa=1.0, seed=0)
    x = np.array([[2.0], [1.0]])
    # by hand: max(2,0)^2 - max(1.5,0)^2
    assert abs(teacher.predict(x)[0] - (4.0 - 2.25)) < 1e-12


def test_sample_reproducible_and_labels_exact():
    teacher = generate_teacher(7, 3, 2.0, seed=21)
    s1 = sample(teacher, 200, seed=4)
    s2 = sample(teacher, 200, seed=4)
    assert np.array_equal(s1.X, s2.X)
    assert np.array_equal(s1.y, s2.y)
    # labels reproduce bit for bit through the shared forward pass
    assert np.max(np.abs(teacher.predict(s1.X) - s1.y)) == 0.0
    t2 = generate_teacher(7, 3, 2.0, seed=21)
    assert np.array_equal(teacher.W, t2.W)
    assert np.array_equal(teacher.v, t2.v)


def test_sample_rejects_empty():
    teacher = generate_teacher(3, 2, 2.0, seed=0)
    with pytest.raises(ValueError):
        sample(teacher, 0, seed=1)


def test_condition_numbers_paper_setting():
    teacher = generate_teacher(10, 5, 2.0, seed=3)
    cn = condition_numbers(teacher)
    assert abs(cn.kappa - 2.0) < 1e-9
    # product formula with sigma = 1, 1.25, 1.5, 1.75, 2
    assert abs(cn.lam - 6.5625) < 1e-8
    assert cn.nu == 1.0
    assert np.allclose(cn.sigma, [2.0, 1.75, 1.5, 1.25, 1.0], atol=1e-9)


def test_condition_numbers_orthonormal():
    teacher = generate_teacher(6, 3, 1.0, seed=2)
    cn = condition_numbers(teacher)
    assert abs(cn.kappa - 1.0) < 1e-9
    assert abs(cn.lam - 1.0) < 1e-9


def test_condition_numbers_rank_deficient():
    act = get_activation("squared_relu")
    W = np.zeros((4, 2))
    W[0, 0] = 1.0
    W[0, 1] = 1.0  # parallel columns
    teacher = TeacherNetwork(W=W, v=np.array([1.0, 1.0]), activation=act, kappa=1.0, seed=0)
    with pytest.raises(ConditioningError):
        condition_numbers(teacher)


def test_sample_split_is_contiguous_partition():
    teacher = generate_teacher(5, 2, 2.0, seed=8)
    s = sample(teacher, 100, seed=8)
    parts = s.split(3)
    assert [p.n for p in parts] == [33, 33, 34]
    assert np.array_equal(np.concatenate([p.y for p in parts]), s.y)


def test_teacher_json_roundtrip(tmp_path):
    teacher = generate_teacher(5, 3, 2.5, seed=12)
    path = tmp_path / "teacher.json"
    save_teacher(teacher, path)
    doc = json.loads(path.read_text())
    assert set(doc) == {"d", "k", "kappa", "seed", "W", "v", "activation"}
    back = load_teacher(path)
    assert np.allclose(back.W, teacher.W)
    assert np.array_equal(back.v, teacher.v)
    assert back.activation.name == teacher.activation.name


def test_samples_csv_roundtrip(tmp_path):
    teacher = generate_teacher(4, 2, 2.0, seed=13)
    s = sample(teacher, 17, seed=13)
    path = tmp_path / "samples.csv"
    save_samples(s, path)
    header = path.read_text().splitlines()[0]
    assert header == "x1,x2,x3,x4,y"
    back = load_samples(path)
    assert np.array_equal(back.X, s.X)
    assert np.array_equal(back.y, s.y)
