"""Smoke test for the echodx Python bindings.

Build and install first:  pip install --no-build-isolation -e crates/py
"""

import math
import random
import tempfile
from pathlib import Path

import echodx


def check_tensor_roundtrip(tmp: Path) -> None:
    t = echodx.Tensor([2, 3], [float(i) for i in range(6)])
    assert t.shape == [2, 3] and len(t) == 2 and t.numel() == 6
    path = tmp / "t.ect"
    t.write(path)
    back = echodx.Tensor.read(path)
    assert back.tolist() == t.tolist()
    try:
        echodx.Tensor([2, 2], [1.0])
    except ValueError:
        pass
    else:
        raise AssertionError("shape mismatch accepted")


def check_network() -> None:
    cfg = echodx.NetworkConfig("desk")
    cfg.set("input_shape", "1,6,16,16")
    net = echodx.Network(cfg, seed=3)
    assert net.feature_dim == 8
    batch = echodx.Tensor.zeros([2, 1, 6, 16, 16])
    assert net.forward_logits(batch).shape == [2, 3]
    assert net.extract_features(batch).shape == [2, 8]

    rng = random.Random(0)
    clip = echodx.Tensor([6, 16, 16], [rng.random() for _ in range(6 * 16 * 16)])
    for baseline in ("zeros", "temporal_mean"):
        rel, logit, base_logit = net.attribute(clip, 1, baseline)
        assert rel.shape == [6, 16, 16]
        err = abs(rel.sum() - (logit - base_logit))
        assert err <= 1e-4 * max(1.0, abs(logit - base_logit)), (baseline, err)


def check_split_and_metrics() -> None:
    assert echodx.split_counts(1888) == (1322, 189, 377)
    labels = [c for c in range(3) for _ in range(60)]
    subsets = echodx.stratified_split(labels, seed=7)
    assert subsets.count("test") == 36
    cm = echodx.confusion_matrix([0, 0, 1, 1, 2], [0, 1, 1, 1, 2], 3)
    assert cm == [[1, 1, 0], [0, 2, 0], [0, 0, 1]]
    assert math.isclose(echodx.overall_accuracy(cm), 0.8)
    assert f"{echodx.f1_score(0.93, 0.90):.2f}" == "0.91"
    assert len(echodx.per_class_prf1(cm)) == 3


def check_tsne() -> None:
    rng = random.Random(1)
    rows, labels = [], []
    for c in range(3):
        center = [rng.uniform(-10, 10) for _ in range(10)]
        for _ in range(20):
            rows.append([m + rng.gauss(0, 1) for m in center])
            labels.append(c)
    points, kl0, kl1 = echodx.tsne(rows, perplexity=10.0, iterations=500, seed=2)
    assert len(points) == 60 and kl1 < kl0
    assert echodx.nn_agreement(points, labels) >= 0.95


def check_resample_and_synth(tmp: Path) -> None:
    ramp = echodx.Tensor([60, 1, 1], [float(i) for i in range(60)])
    out = echodx.resample(ramp, 0, 60)
    assert out.tolist() == [2.0 * k for k in range(30)]
    n = echodx.synth(tmp / "data", per_class=3, seed=7)
    assert n == 9 and (tmp / "data" / "manifest.tsv").exists()


def main() -> None:
    with tempfile.TemporaryDirectory() as d:
        tmp = Path(d)
        check_tensor_roundtrip(tmp)
        check_network()
        check_split_and_metrics()
        check_tsne()
        check_resample_and_synth(tmp)
    print(f"echodx {echodx.__version__}: python smoke test passed")


if __name__ == "__main__":
    main()
