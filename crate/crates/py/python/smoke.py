"""Smoke test for the jigsaw_rs extension module.

Build and install first, e.g. `maturin develop -m crates/py/Cargo.toml`,
then run `python crates/py/python/smoke.py`.
"""

import json
import os
import tempfile
from fractions import Fraction

import jigsaw_rs

GT = [2, 3, 1, 4, 6, 5]


def answer(indices):
    return "<think>compare borders</think><answer>%s</answer>" % ", ".join(map(str, indices))


def check_score():
    exact = jigsaw_rs.score(answer(GT), GT)
    assert exact == {"format_reward": 0.2, "accuracy_reward": 1.0, "total": 1.2, "validity": "exact"}, exact

    two_of_six = jigsaw_rs.score(answer([2, 1, 3, 4, 5, 6]), GT, gamma=0.2)
    assert two_of_six["accuracy_reward"] == float(Fraction(1, 15)), two_of_six
    assert two_of_six["validity"] == "partial"

    hack = jigsaw_rs.score(answer([2, 3, 1, 4, 4, 4]), GT)
    assert hack["accuracy_reward"] == 0.0 and hack["validity"] == "invalid_permutation"

    bad = jigsaw_rs.score("no tags here", GT)
    assert bad["total"] == 0.0 and bad["validity"] == "bad_format"

    spec = jigsaw_rs.RewardSpec(gamma="1/10", format_bonus=0.5)
    assert spec.score(answer([1, 2, 3, 4, 6, 5]), GT)["accuracy_reward"] == 0.05

    for bad_gamma in (0.0, 1.0, "x"):
        try:
            jigsaw_rs.score(answer(GT), GT, gamma=bad_gamma)
        except ValueError:
            pass
        else:
            raise AssertionError("gamma=%r accepted" % (bad_gamma,))

    parsed = jigsaw_rs.parse_response("<answer>1, 2</answer>", 2)
    assert parsed["format_ok"] is False and parsed["failure_reason"] == "missing_think"


def check_manifest():
    try:
        jigsaw_rs.iter_manifest("/nonexistent/manifest.jsonl")
    except OSError:
        pass
    else:
        raise AssertionError("missing manifest accepted")

    with tempfile.TemporaryDirectory() as root:
        lines = []
        for i in range(3):
            lines.append(
                json.dumps(
                    {
                        "task_id": "%016x" % i,
                        "modality": "image",
                        "k": 4,
                        "prompt": "p",
                        "media": ["tiles/%d/%d.png" % (i, j) for j in range(1, 5)],
                        "ground_truth": [2, 1, 4, 3],
                        "perm": [1, 0, 3, 2],
                        "seed": i,
                        "source_ref": "img%d.png" % i,
                        "config_digest": "0" * 16,
                        "created_unix_s": 0,
                        "media_sha256": [],
                        "detail": {"rows": 2, "cols": 2},
                    }
                )
            )
        with open(os.path.join(root, "manifest-00000.jsonl"), "w") as f:
            f.write("\n".join(lines) + "\n")
        records = list(jigsaw_rs.iter_manifest(root))
        assert [r["task_id"] for r in records] == ["%016x" % i for i in range(3)]
        assert all(os.path.isabs(m) for r in records for m in r["media"])
        assert records[0]["ground_truth"] == [2, 1, 4, 3]

        with open(os.path.join(root, "manifest-00000.jsonl"), "a") as f:
            f.write("{broken\n")
        it = jigsaw_rs.iter_manifest(root)
        for _ in range(3):
            next(it)
        try:
            next(it)
        except ValueError as e:
            assert ":4" in str(e) or "line 4" in str(e), e
        else:
            raise AssertionError("broken line accepted")


if __name__ == "__main__":
    check_score()
    check_manifest()
    print("jigsaw_rs %s smoke test ok" % jigsaw_rs.__version__)
