"""Smoke test for the pylara extension module.

Build and install first, for example:
    pip install --no-build-isolation ./crates/python
"""

import math
import os
import tempfile

import pylara


def main():
    stream = pylara.synth(seed=1, len=2000, channels=2, changepoint=1000)
    values, labels = stream["values"], stream["labels"]
    assert len(values) == 2000 and len(values[0]) == 2
    assert len(labels) == 2000 and set(labels) <= {0, 1}

    model, losses = pylara.Model.train(values[:1000], w=8, epochs=3, latent=2, hidden=8, seed=0)
    assert len(losses) == 3 and all(math.isfinite(l) for l in losses)
    assert (model.window, model.channels, model.latent, model.generation) == (8, 2, 2, 0)

    retrained, report = model.retrain(values[1000:1057], seed=3)
    assert retrained.generation == 1
    assert report["converged"] and report["loss_x"] >= 0.0

    again, _ = model.retrain(values[1000:1057], seed=3)
    holdout = values[1057:]
    scores = retrained.score(holdout)
    assert scores == again.score(holdout)
    assert len(scores) == len(holdout)

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "m.state")
        retrained.save(path)
        assert pylara.Model.load(path).score(holdout) == scores

    rep = pylara.best_f1(scores, labels[1057:], point_adjust=True)
    assert 0.0 <= rep.f1 <= 1.0
    assert str(rep).startswith("precision=")
    assert pylara.EvalReport.parse(str(rep)).f1 == rep.f1

    assert abs(pylara.transfer_distance(0.9, 0.6) - 0.5) < 1e-12
    w, b = pylara.fit_affine([[0.0], [1.0], [2.0]], [[1.0], [3.0], [5.0]], ridge=0.0)
    assert abs(w[0][0] - 2.0) < 1e-9 and abs(b[0] - 1.0) < 1e-9
    assert pylara.kde_kl(values[:200], values[:200], n_mc=50) == 0.0

    try:
        pylara.best_f1([1.0, 2.0], [0, 0])
    except pylara.LaraError as e:
        assert "detect:" in str(e)
    else:
        raise AssertionError("expected LaraError")

    print("pylara smoke test passed")


if __name__ == "__main__":
    main()
