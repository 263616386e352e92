import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sddpkit.errors import FormatVersionError, MalformedFileError, TooManyPaths
from sddpkit.model import (
    MultistageProblem,
    ProcessKind,
    StageRealization,
    UncertaintyProcess,
    enumerate_paths,
    load_instance,
    sample_path,
    save_instance,
    validate,
)
from support import newsvendor, random_recourse_instance


def two_stage_markov(P, initial=(0.5, 0.5)):
    stage = tuple(
        StageRealization(A=[[1.0, -1.0]], B=np.zeros((0, 2)), b=[d], c=[1.0, 0.0])
        for d in (1.0, 2.0)
    )
    mid = tuple(
        StageRealization(
            A=[[1.0, -1.0]], B=[[1.0, 0.0]], b=[d], c=[1.0, 0.0]
        )
        for d in (1.0, 2.0)
    )
    process = UncertaintyProcess(
        kind=ProcessKind.MARKOV,
        outcomes=(mid, stage),
        initial=np.array(initial, dtype=float),
        transitions=(np.array(P, dtype=float),),
    )
    stage0 = StageRealization(A=[[1.0, 1.0]], B=[[1.0, 0.0]], b=[3.0], c=[1.0, 0.0])
    return MultistageProblem(T=2, stage0=stage0, process=process, resource_dims=(1, 1))


def test_validate_newsvendor_is_clean():
    assert validate(newsvendor()).violations == []


def test_validate_flags_bad_transition_row_sum():
    p = two_stage_markov([[0.5, 0.49], [0.5, 0.5]])
    report = validate(p)
    assert any("row 0 of P_1 sums to 0.99" in v for v in report.violations)


def test_validate_flags_linking_shape_mismatch():
    stage0 = StageRealization(
        A=[[1.0, 1.0, 1.0]], B=[[1.0, 0.0]], b=[3.0], c=[1.0, 0.0, 0.0]
    )
    base = newsvendor()
    p = MultistageProblem(
        T=1, stage0=stage0, process=base.process, resource_dims=(1,)
    )
    report = validate(p)
    assert any("linking matrix" in v and "columns" in v for v in report.violations)


def test_validate_flags_nonfinite_entries():
    stage0 = StageRealization(
        A=[[np.nan, 1.0]], B=[[1.0, 0.0]], b=[3.0], c=[1.0, 0.0]
    )
    p = MultistageProblem(
        T=1, stage0=stage0, process=newsvendor().process, resource_dims=(1,)
    )
    assert any("non-finite" in v for v in validate(p).violations)


def test_sample_path_singleton_support():
    p, _ = random_recourse_instance(7, T=3, max_outcomes=2)
    # collapse to singleton outcome sets
    proc = p.process
    outcomes = tuple((stage[0],) for stage in proc.outcomes)
    singleton = UncertaintyProcess(
        kind=ProcessKind.STAGEWISE_INDEPENDENT,
        outcomes=outcomes,
        probs=tuple(np.array([1.0]) for _ in range(p.T)),
    )
    q = MultistageProblem(
        T=p.T, stage0=p.stage0, process=singleton, resource_dims=p.resource_dims
    )
    path = sample_path(q, np.random.default_rng(0))
    assert path.indices == tuple([0] * p.T)
    assert path.probability == 1.0


def test_sample_path_absorbing_markov_chain():
    p = two_stage_markov([[1.0, 0.0], [0.0, 1.0]])
    rng = np.random.default_rng(4)
    for _ in range(20):
        path = sample_path(p, rng)
        assert path.indices[0] == path.indices[1]


def test_sample_path_self_transition_frequency_matches_p_stay():
    # 10-regime chain, 0.91 on the diagonal, 0.01 off-diagonal.
    n = 10
    P = np.full((n, n), 0.01)
    np.fill_diagonal(P, 0.91)
    real = StageRealization(A=[[1.0]], B=np.zeros((0, 1)), b=[1.0], c=[1.0])
    T = 11
    outcomes = tuple(tuple(real for _ in range(n)) for _ in range(T))
    process = UncertaintyProcess(
        kind=ProcessKind.MARKOV,
        outcomes=outcomes,
        initial=np.full(n, 0.1),
        transitions=tuple(P for _ in range(T - 1)),
    )
    stage0 = StageRealization(A=[[1.0]], B=np.zeros((0, 1)), b=[1.0], c=[0.0])
    p = MultistageProblem(
        T=T, stage0=stage0, process=process, resource_dims=tuple([0] * T)
    )
    rng = np.random.default_rng(123)
    stays = trans = 0
    while trans < 100_000:
        path = sample_path(p, rng)
        for a, b in zip(path.indices, path.indices[1:]):
            trans += 1
            stays += a == b
    assert abs(stays / trans - 0.91) <= 0.01


def test_enumerate_paths_product_measure():
    p, _ = random_recourse_instance(3, T=2, max_outcomes=2)
    proc = UncertaintyProcess(
        kind=ProcessKind.STAGEWISE_INDEPENDENT,
        outcomes=tuple(stage[:2] for stage in p.process.outcomes),
        probs=(np.array([0.5, 0.5]), np.array([0.5, 0.5])),
    )
    q = MultistageProblem(
        T=2, stage0=p.stage0, process=proc, resource_dims=p.resource_dims
    )
    paths = enumerate_paths(q, 100)
    assert len(paths) == 4
    assert all(abs(path.probability - 0.25) < 1e-15 for path in paths)


def test_enumerate_paths_deterministic_markov_chain():
    p = two_stage_markov([[1.0, 0.0], [0.0, 1.0]])
    paths = enumerate_paths(p, 100)
    assert len(paths) == 2
    assert sorted(path.indices for path in paths) == [(0, 0), (1, 1)]
    assert all(abs(path.probability - 0.5) < 1e-15 for path in paths)


def test_enumerate_paths_guard():
    real = StageRealization(A=[[1.0]], B=np.zeros((0, 1)), b=[1.0], c=[1.0])
    T = 20
    outcomes = tuple(tuple(real for _ in range(10)) for _ in range(T))
    process = UncertaintyProcess(
        kind=ProcessKind.STAGEWISE_INDEPENDENT,
        outcomes=outcomes,
        probs=tuple(np.full(10, 0.1) for _ in range(T)),
    )
    stage0 = StageRealization(A=[[1.0]], B=np.zeros((0, 1)), b=[1.0], c=[0.0])
    p = MultistageProblem(
        T=T, stage0=stage0, process=process, resource_dims=tuple([0] * T)
    )
    with pytest.raises(TooManyPaths):
        enumerate_paths(p, 10**6)


@settings(deadline=None, max_examples=25)
@given(seed=st.integers(0, 10_000), markov=st.booleans())
def test_enumerate_paths_probabilities_sum_to_one(seed, markov):
    p, _ = random_recourse_instance(seed, markov=markov)
    paths = enumerate_paths(p, 10_000)
    assert abs(sum(path.probability for path in paths) - 1.0) <= 1e-12


def test_sample_path_empirical_distribution_converges():
    p, _ = random_recourse_instance(11, markov=True, T=3)
    paths = enumerate_paths(p, 10_000)
    exact = {path.indices: path.probability for path in paths}
    rng = np.random.default_rng(99)
    N = 20_000
    counts: dict = {}
    for _ in range(N):
        s = sample_path(p, rng)
        counts[s.indices] = counts.get(s.indices, 0) + 1
    tv = 0.5 * sum(
        abs(counts.get(key, 0) / N - prob) for key, prob in exact.items()
    )
    tv += 0.5 * sum(v / N for k, v in counts.items() if k not in exact)
    assert tv <= 3.0 * np.sqrt(len(exact) / N)


def test_stagewise_expressed_as_markov_gives_same_distribution():
    p, _ = random_recourse_instance(5, markov=False, T=3)
    proc = p.process
    transitions = []
    for t in range(1, p.T):
        row = proc.probs[t]
        transitions.append(np.tile(row, (proc.n_outcomes(t), 1)))
    as_markov = UncertaintyProcess(
        kind=ProcessKind.MARKOV,
        outcomes=proc.outcomes,
        initial=proc.probs[0],
        transitions=tuple(transitions),
    )
    q = MultistageProblem(
        T=p.T, stage0=p.stage0, process=as_markov, resource_dims=p.resource_dims
    )
    a = {path.indices: path.probability for path in enumerate_paths(p, 10_000)}
    b = {path.indices: path.probability for path in enumerate_paths(q, 10_000)}
    assert a.keys() == b.keys()
    assert all(abs(a[k] - b[k]) <= 1e-12 for k in a)


def test_instance_roundtrip_is_bitwise(tmp_path):
    p, _ = random_recourse_instance(21, markov=True)
    first = tmp_path / "a.json"
    second = tmp_path / "b.json"
    save_instance(p, first)
    save_instance(load_instance(first), second)
    assert first.read_bytes() == second.read_bytes()


def test_instance_roundtrip_stagewise(tmp_path):
    p = newsvendor()
    path = tmp_path / "news.json"
    save_instance(p, path)
    q = load_instance(path)
    assert q.T == p.T
    assert np.array_equal(q.stage0.A, p.stage0.A)
    assert q.process.kind is ProcessKind.STAGEWISE_INDEPENDENT


def test_load_rejects_truncated_file(tmp_path):
    p = newsvendor()
    path = tmp_path / "news.json"
    save_instance(p, path)
    path.write_text(path.read_text()[: len(path.read_text()) // 2])
    with pytest.raises(MalformedFileError):
        load_instance(path)


def test_load_rejects_wrong_version(tmp_path):
    p = newsvendor()
    path = tmp_path / "news.json"
    save_instance(p, path)
    obj = json.loads(path.read_text())
    obj["version"] = 99
    path.write_text(json.dumps(obj))
    with pytest.raises(FormatVersionError):
        load_instance(path)
