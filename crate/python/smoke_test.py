#!/usr/bin/env python3
"""Smoke test for the conewave_py extension module.

Builds the cdylib with cargo, stages it under an importable name, and
exercises the main types and operations end to end.
"""

import math
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def build_and_stage() -> Path:
    subprocess.run(
        ["cargo", "build", "-p", "conewave-py"], cwd=ROOT, check=True
    )
    lib = ROOT / "target" / "debug" / "libconewave_py.so"
    if not lib.exists():  # macOS
        lib = ROOT / "target" / "debug" / "libconewave_py.dylib"
    stage = Path(tempfile.mkdtemp(prefix="conewave-py-"))
    shutil.copy(lib, stage / "conewave_py.so")
    return stage


def main() -> None:
    sys.path.insert(0, str(build_and_stage()))
    import conewave_py as cw

    domain = cw.TorusDomain(2, 32.0, 128)
    assert domain.n == 2 and domain.period == 32.0

    atoms = [
        ([1.5, 0.0], [1.0 + 0.0j]),
        ([1.40625, 0.09375], [0.5 + 0.5j]),
        ([1.59375, -0.125], [0.0 - 1.0j]),
    ]
    wave = cw.Wave(domain, "red", 0, 1, atoms)
    energy = wave.energy()
    # E = sum of |amp|^2 * period^n.
    expect = (1.0 + 0.5 + 1.0) * 32.0**2
    assert math.isclose(energy, expect, rel_tol=1e-12), (energy, expect)
    assert wave.margin() > 0.0
    assert wave.angular_dispersion() >= 0.0

    # JSON round trip preserves the evaluation.
    clone = cw.Wave.from_json(wave.to_json())
    pts = [([3.0, 4.0], 0.5), ([10.0, 20.0], -2.0)]
    for a, b in zip(wave.evaluate(pts), clone.evaluate(pts)):
        assert a == b

    rev = wave.time_reverse()
    assert rev.color == "blue" and math.isclose(rev.energy(), energy)

    unit = wave.normalized()
    assert math.isclose(unit.energy(), 1.0, rel_tol=1e-12)

    report = cw.localize(wave, [16.0, 16.0], 0.0, 8.0)
    assert report["energy_minor_ok"]
    assert report["energy_projected"] <= report["energy"] + 1e-12
    assert report["projected"].color == "red"

    decomp = cw.packets(wave, [16.0, 16.0], 0.0, 8.0, 0.2)
    assert decomp["reconstruction_residual"] <= 1e-10
    assert decomp["n_tubes"] >= 1
    # Packets overlap, so tube energies need not sum to E; they are only
    # controlled by the almost-orthogonality cap.
    assert 0.0 < sum(decomp["tube_energies"]) <= (1.0 + 10.0 * 0.2) ** 2 * energy

    verdict = cw.check_exponents(
        2, (2, 1), (0, 1), (1, 2), (1, 2), (3, 4), (3, 4)
    )
    assert verdict["admissible"], verdict
    assert verdict["lin_threshold"] == (1, 2)
    bad = cw.check_exponents(2, (3, 1), (0, 1), (1, 2), (1, 2), (3, 4), (3, 4))
    assert not bad["admissible"]

    rows = cw.multiplier_scan(domain, [0, 1], [0, 1], 0.5, 5.0 / 3.0, 0.1, 12, 4)
    assert len(rows) == 4
    base = next(r for r in rows if r["l"] == 0 and r["k"] == 0)
    assert base["ratio"] > 0.0

    pair = (unit, unit.time_reverse())
    ratio = cw.a_ratio([pair], 8.0, 2.0, 24, 6)
    assert ratio > 0.0

    print("smoke test passed")


if __name__ == "__main__":
    main()
