#!/usr/bin/env python3
"""Smoke test for the xspec Python extension.

Builds the cdylib with cargo, copies it next to this script as xspec.so,
then runs a tiny synth -> train -> eval -> gradcheck pipeline.
"""

import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def build_extension() -> None:
    subprocess.run(
        ["cargo", "build", "-p", "xspec-py"], cwd=ROOT, check=True
    )
    built = ROOT / "target" / "debug" / "libxspec.so"
    if not built.exists():  # macOS
        built = ROOT / "target" / "debug" / "libxspec.dylib"
    shutil.copy(built, Path(__file__).parent / "xspec.so")


def main() -> int:
    build_extension()
    sys.path.insert(0, str(Path(__file__).parent))
    import xspec

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        manifest = xspec.synth(tmp / "ds", n_ids=4, n_domains=2, per_domain=4, seed=7)
        n = xspec.manifest_len(manifest)
        assert n == 32, f"expected 32 records, got {n}"
        print(f"synth ok: {n} records at {manifest}")

        losses = xspec.train(
            manifest,
            tmp / "run",
            epochs=2,
            warmup_epochs=1,
            p_ids=4,
            k_batch=2,
            augment=False,
            seed=0,
        )
        assert losses and all(l == l for l in losses), "non-finite loss"
        print(f"train ok: {len(losses)} steps, final loss {losses[-1]:.4f}")

        rank1, rank5, rank10, mAP = xspec.evaluate(
            manifest, tmp / "run" / "final.ckpt", seed=0
        )
        assert 0.0 <= rank1 <= rank5 <= rank10 <= 1.0
        assert 0.0 <= mAP <= 1.0
        print(f"eval ok: rank-1 {rank1:.3f}, rank-5 {rank5:.3f}, mAP {mAP:.3f}")

        err = xspec.gradcheck(coords_per_group=5, seed=0)
        assert err < 1e-4, f"gradient check failed: max rel err {err}"
        print(f"gradcheck ok: max rel err {err:.2e}")

        model = xspec.Model(n_classes=4, dim=16, layers=1, heads=2, k_local=2,
                            image_h=16, image_w=8, patch=4, seed=1)
        feats = model.feature([0.5] * (16 * 8 * 3), 0)
        assert len(feats) == model.feature_dim
        print(f"model ok: feature_dim {model.feature_dim}")

    print("smoke test passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
