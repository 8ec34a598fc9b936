#!/usr/bin/env python3
"""Smoke test for the rnnboost Python bindings.

Builds nothing itself: it locates the compiled extension under target/,
copies it next to a temp directory under the right module name, imports it,
and drives a miniature pipeline: generate -> synthesize -> verify ->
train -> simulate.

Usage:
    cargo build -p rnnboost-py [--release]
    python3 python/smoke_test.py
"""

import pathlib
import shutil
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def locate_extension():
    candidates = []
    for profile in ("release", "debug"):
        for name in ("librnnboost_py.so", "rnnboost_py.dll", "librnnboost_py.dylib"):
            p = ROOT / "target" / profile / name
            if p.exists():
                candidates.append(p)
    if not candidates:
        sys.exit("extension not found; run `cargo build -p rnnboost-py` first")
    return max(candidates, key=lambda p: p.stat().st_mtime)


def main():
    ext = locate_extension()
    tmp = tempfile.mkdtemp(prefix="rnnboost_py_")
    suffix = ".so" if ext.suffix in (".so", ".dylib") else ".pyd"
    shutil.copy(ext, pathlib.Path(tmp) / f"rnnboost_py{suffix}")
    sys.path.insert(0, tmp)

    import rnnboost_py as rb

    bench = rb.Benchmark.generate("random-3", seed=7)
    assert bench.state_dim == 3
    assert bench.input_dim == 1

    synth = bench.synthesize()
    residuals = synth.residuals()
    assert residuals, "no residuals reported"
    for name, margin in residuals.items():
        assert margin >= -1e-7, f"{name}: {margin}"

    cert = synth.certificate("2")
    assert 0.0 <= cert["a"] < 1.0
    assert cert["kappa0"] >= 1.0

    ok, checks = rb.verify(bench, synth, samples=2000, scenarios=5, horizon=100, seed=3)
    assert ok, f"verification failed: {checks}"

    op, losses = rb.train_operator(
        bench, synth, scenarios=4, horizon=40, epochs=4, seed=1, n_xi=6,
        step_size=0.02, momentum=0.7, grad_clip=5.0,
    )
    assert losses[-1] <= losses[0] + 1e-12, "training increased the loss"
    assert op.gain_bound >= 0.0

    ok2, _ = rb.verify(bench, synth, operator=op, samples=1000, scenarios=5,
                       horizon=100, seed=4, p="inf")
    assert ok2, "verification with the trained operator failed"

    traj = rb.simulate(bench, synth, operator=op, seed=9, horizon=50)
    assert len(traj["x"]) == 50
    assert len(traj["u"][0]) == bench.input_dim

    # JSON round trips match the CLI formats.
    again = rb.Benchmark.from_json(bench.model_json(), bench.constraints_json())
    assert again.state_dim == bench.state_dim
    synth2 = rb.Synthesis.from_json(synth.to_json())
    assert synth2.gain == synth.gain
    op2 = rb.Operator.from_json(op.to_json())
    assert abs(op2.gain_bound - op.gain_bound) < 1e-15

    print("smoke test passed:")
    print(f"  gain = {synth.gain}")
    print(f"  gamma_s = {synth.gamma_s}, global = {synth.global_certificate}")
    print(f"  losses = {[round(l, 6) for l in losses]}")


if __name__ == "__main__":
    main()
