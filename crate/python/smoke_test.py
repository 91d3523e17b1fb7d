"""Smoke test for the mtpu_py extension module.

Build and install first:  maturin build --release -m crates/py/Cargo.toml && pip install target/wheels/*.whl
"""

import math
import os
import tempfile

import mtpu_py


def main():
    total, term_pos, correction, clamped = mtpu_py.pu_risk([5.0], [-5.0], 0.2)
    assert clamped and correction < 0
    assert abs(total - 0.2 * math.log1p(math.exp(-5.0))) < 1e-12

    t, dof, p, stars = mtpu_py.welch_ttest([1, 2, 3, 4, 5], [2, 3, 4, 5, 6])
    assert abs(t + 1.0) < 1e-12 and abs(dof - 8.0) < 1e-12 and stars == ""

    assert abs(mtpu_py.jaccard(["1", "2"], ["2", "3"]) - 1 / 3) < 1e-15

    corpus, truth = mtpu_py.generate(periods=2, n_pos=60, n_unl=60, vocab_size=100, seed=3)
    assert corpus.num_periods == 2 and len(corpus) == 240
    assert set(truth) == set(corpus.unlabeled_ids(1) + corpus.unlabeled_ids(2))

    model = mtpu_py.train(corpus, mode="mtpu", hidden=16, epochs=10, batch_pos=16, batch_unl=16, seed=1)
    assert model.kind == "mtpu" and model.num_periods == 2
    scores = model.score_unlabeled(corpus)
    assert [len(s) for s in scores] == [60, 60]

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "model.bin")
        model.save(path)
        loaded = mtpu_py.Model.load(path)
        again = loaded.score_unlabeled(corpus)
        assert all(abs(a[1] - b[1]) < 1e-3 for s, r in zip(scores, again) for a, b in zip(s, r))

    near, distant = mtpu_py.quantile_split(scores[0], 0.2)
    assert len(near) == len(distant) == 12
    precision = sum(truth[i] == 1 for i in near) / len(near)

    csv = mtpu_py.assessment_table_csv(corpus, scores)
    assert csv.splitlines()[0].startswith("period,mtpu_nf,mtpu_df")

    groups = []
    for t, s in enumerate(scores, start=1):
        n, dd = mtpu_py.quantile_split(s, 0.2)
        groups += [((t, "near"), n), ((t, "distant"), dd)]
    net = mtpu_py.cooccurrence_network(corpus, groups, 1, "near", k=10)
    assert '"nodes"' in net

    try:
        mtpu_py.train(corpus, prior=1.5)
    except ValueError:
        pass
    else:
        raise AssertionError("invalid prior accepted")

    print(f"mtpu_py smoke test passed (near precision {precision:.2f})")


if __name__ == "__main__":
    main()
