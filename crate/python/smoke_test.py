#!/usr/bin/env python3
"""Smoke test for the vldn_py extension module.

Builds nothing itself: run `cargo build -p vldn-py` first (or pass
--release and build in release mode). The script copies the cdylib next to
a temp directory under the import name and exercises the main surfaces.
"""

import argparse
import math
import shutil
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def import_module(release: bool):
    profile = "release" if release else "debug"
    lib = REPO / "target" / profile / "libvldn_py.so"
    if not lib.exists():
        sys.exit(f"{lib} not found; run `cargo build -p vldn-py{' --release' if release else ''}`")
    stage = Path(tempfile.mkdtemp(prefix="vldn_py_"))
    shutil.copy(lib, stage / "vldn_py.so")
    sys.path.insert(0, str(stage))
    import vldn_py  # noqa: E402

    return vldn_py


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--release", action="store_true")
    args = parser.parse_args()
    m = import_module(args.release)

    assert m.MOTION_DIMS == 56 and m.N_MELS == 128 and m.FPS == 30

    with tempfile.TemporaryDirectory(prefix="vldn_data_") as data_dir:
        manifest = m.generate_dataset(data_dir, 4, 60, 7, 0.5)
        assert Path(manifest).exists(), "manifest written"

        sample = m.load_sample(str(Path(data_dir) / "samples" / "sample_00000.vldx"))
        motion, rows, cols = sample.listener_motion
        assert (rows, cols) == (60, 56), (rows, cols)
        assert len(motion) == rows * cols
        _, mel_rows, mel_cols = sample.mel
        assert (mel_rows, mel_cols) == (128, 120)
        va, m_tags, two = sample.va
        assert (m_tags, two) == (10, 2)
        assert all(-1.0 <= v <= 1.0 for v in va), "VA stays in [-1, 1]"
        assert sample.text and sample.template_id is not None

        up, up_rows, _ = m.upsample_tags(va, m_tags, 60)
        assert up_rows == 60
        assert up[0] == va[0] and up[1] == va[1], "zero-order hold keeps tag values"

    # deterministic text encoding
    a = m.encode_text("the listener stays calm", 16)
    b = m.encode_text("the listener stays calm", 16)
    assert a == b, "toy encoder is deterministic"
    assert a[1] == 4 and a[2] == 16, "one row per token"

    # cosine schedule: starts at 1, strictly decreasing, small tail
    ab = m.cosine_alpha_bar(100)
    assert ab[0] == 1.0
    assert all(ab[t] < ab[t - 1] for t in range(1, 101))
    assert 0.0 < ab[100] < 0.01

    # FD identity and a shifted pair
    frames = [math.sin(0.37 * i + 1.3 * j) for i in range(200) for j in range(3)]
    fd0 = m.frechet_distance(frames, 200, frames, 200, 3)
    assert fd0 <= 1e-8, fd0
    shifted = [v + 1.0 for v in frames]
    fd1 = m.frechet_distance(frames, 200, shifted, 200, 3)
    assert abs(fd1 - 3.0) < 1e-6, fd1  # unit shift in each of 3 dims

    # temporal variance of an alternating channel is 1
    alt = [1.0 if t % 2 == 0 else -1.0 for t in range(10)]
    assert abs(m.temporal_variance(alt, 10, 1) - 1.0) < 1e-12

    # self-correlation of differences is 1
    seq = [math.sin(0.2 * t + j) for t in range(30) for j in range(4)]
    assert abs(m.rpcc(seq, seq, 30, 4) - 1.0) < 1e-9

    print("vldn_py smoke test passed")


if __name__ == "__main__":
    main()
