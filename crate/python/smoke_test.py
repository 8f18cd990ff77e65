"""Build the extension with cargo and exercise the main operations.

Run from the repository root: python3 python/smoke_test.py
"""

import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def build() -> Path:
    subprocess.run(
        ["cargo", "build", "--release", "-p", "invariant-affect-py", "--features", "extension-module"],
        cwd=ROOT,
        check=True,
    )
    lib = ROOT / "target" / "release" / "libinvariant_affect_py.so"
    out = Path(tempfile.mkdtemp()) / "invariant_affect_py.so"
    shutil.copy(lib, out)
    return out.parent


def main() -> None:
    sys.path.insert(0, str(build()))
    import invariant_affect_py as ia

    assert abs(ia.point_biserial([1.0, 2.0, 3.0, 4.0], [0, 0, 1, 1]) - 0.894427190999916) < 1e-12
    assert ia.point_biserial([1.0, 1.0, 1.0], [0, 1, 1]) is None

    corpus, planted = ia.generate(
        n_envs=12, n_outliers=3, sessions_per_env=2, windows_per_session=25, d=40, n_invariant=12, seed=5
    )
    assert len(corpus) == 12 and corpus.d == 40

    partition = ia.detect_outliers(corpus, nu=0.6, kernel="linear")
    print(partition, "planted:", planted)
    assert partition.outliers == planted

    mask = ia.select_invariant(corpus, partition.inliers, lambda_=0.7)
    assert 0 < len(mask) <= corpus.d
    model = ia.train(corpus, partition.inliers, mask=mask)
    assert model.features == mask.selected
    assert 0.0 < model.predict_proba([0.0] * corpus.d) < 1.0

    splits = ia.evaluate_splits(corpus, partition)
    for name in ("all", "inliers", "outliers"):
        print(name, splits[name])
    assert splits["inliers"].mean_accuracy > splits["outliers"].mean_accuracy

    report = ia.lopo_cv(corpus, partition.inliers, lambda_=0.7)
    lo, hi = report.ci95
    assert lo <= report.mean_accuracy <= hi

    with tempfile.TemporaryDirectory() as tmp:
        reloaded = ia.Corpus.load(corpus.write(tmp))
        assert reloaded.env_ids == corpus.env_ids

    try:
        ia.detect_outliers(corpus, nu=1.5)
    except ValueError as err:
        print("rejected:", err)
    else:
        raise AssertionError("nu = 1.5 accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
