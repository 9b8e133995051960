"""Smoke test for the polarlab Python bindings.

Build first:
    cargo build --release -p polarlab-py
then run from the repository root:
    python3 python/smoke_test.py
"""

import json
import math
import os
import shutil
import sys
import tempfile

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def load():
    lib = os.path.join(ROOT, "target", "release", "libpolarlab_py.so")
    if not os.path.exists(lib):
        sys.exit(f"missing {lib}; run `cargo build --release -p polarlab-py`")
    tmp = tempfile.mkdtemp()
    shutil.copy(lib, os.path.join(tmp, "polarlab_py.so"))
    sys.path.insert(0, tmp)
    import polarlab_py

    return polarlab_py


def main():
    pl = load()
    assert pl.report_schema_version() == "1.0.0"
    names = [name for name, _ in pl.catalog()]
    assert "clifford_torus" in names, names

    w = pl.willmore("clifford_torus", nu=32, nv=32)
    assert abs(w - 2 * math.pi**2) < 1e-6, w

    cfg = {
        "surface": {"name": "clifford_torus"},
        "grid": {"nu": 32, "nv": 32},
        "pipeline": [{"step": "analyze"}, {"step": "polar"}],
    }
    with tempfile.TemporaryDirectory() as out:
        code, summary = pl.run(json.dumps(cfg), out)
        summary = json.loads(summary)
        assert code == 0 and summary["pass"], summary
        with open(os.path.join(out, "report_analyze.json")) as f:
            report = json.load(f)
        assert report["schema_version"] == "1.0.0"

    try:
        pl.run(json.dumps({"surface": {"name": "nowhere"}, "pipeline": [{"step": "analyze"}]}), "/tmp")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown surface accepted")

    print(f"ok: W = {w:.12f}, {len(names)} catalog surfaces")


if __name__ == "__main__":
    main()
