"""Smoke test for the `naop` extension module.

Build and install first, e.g. `maturin develop -m crates/python/Cargo.toml`,
or put a built `naop.so` on PYTHONPATH. Then run `python smoke_test.py`.
"""

import math
import os
import tempfile

import naop


def main():
    assert naop.descriptor_dimension(30, "full") == 177
    full = naop.describe([(-0.25, -0.25, 0.25, 0.25), (-0.15, -0.25, 0.35, 0.25)], "full")
    expected = [0.0, 0.0, 0.1, 0.0, 0.25, 0.25, 0.1, 0.0, 0.0]
    assert all(math.isclose(a, b, abs_tol=1e-12) for a, b in zip(full, expected)), full

    cols, cost = naop.solve_assignment([[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 2.0]])
    assert cost == 5.0 and cols == [1, 0, 2], (cols, cost)
    assert naop.iou((0, 0, 10, 10), (5, 0, 15, 10)) == 1 / 3

    report = naop.average_precision([0.9, 0.8, 0.7], [True, False, True], 2)
    assert math.isclose(report["ap"], 5 / 6), report

    data = naop.Dataset.generate(seed=3, tracks_per_video=10)
    assert len(data) == 200 and len(data.subjects()) == 5
    forest = naop.Forest.train(data, h=30, n_trees=10, seed=3)
    assert forest.h == 30 and forest.n_trees == 10

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "model.bin")
        forest.save(path)
        again = naop.Forest.load(path)
        assert again.to_bytes() == forest.to_bytes()
        tracks = os.path.join(tmp, "tracks.jsonl")
        data.save(tracks)
        assert naop.Dataset.load(tracks).to_jsonl() == data.to_jsonl()

    preds = forest.predict(data)
    assert preds and all(0.0 <= p[4] <= 1.0 for p in preds)
    lopo = naop.lopo(data, n_trees=10, seed=3)
    assert lopo["mean_ap"] > 0.9, lopo["mean_ap"]

    try:
        naop.Forest.from_bytes(b"not a model")
    except naop.ModelMismatchError:
        pass
    else:
        raise AssertionError("corrupt model accepted")

    print(f"naop {naop.__version__}: smoke test passed (LOPO mean AP {lopo['mean_ap']:.3f})")


if __name__ == "__main__":
    main()
