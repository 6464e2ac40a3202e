"""Cross-component contract: bundles written by the exporter load here.

Skipped when the exporter has not been built (`npm run build` in
exporter/); the exporter's own vitest suite runs the same contract from
the other side.
"""

import shutil
import subprocess
from pathlib import Path

import numpy as np
import pytest

from lorashield import load_concept_spec

EXPORTER_CLI = Path(__file__).resolve().parents[1] / "exporter" / "dist" / "cli.js"
WORDLIST = Path(__file__).resolve().parents[1] / "exporter" / "fixtures" / "wordlist.json"

pytestmark = pytest.mark.skipif(
    shutil.which("node") is None or not EXPORTER_CLI.is_file(),
    reason="exporter not built (run `npm install && npm run build` in exporter/)",
)


def export_bundle(tmp_path, concept, k, encoder="hash-sim-v1-77x768"):
    out = tmp_path / f"{concept}.st"
    subprocess.run(
        [
            "node", str(EXPORTER_CLI), "export",
            "--concept", concept, "--k", str(k),
            "--encoder", encoder,
            "--offline", str(WORDLIST),
            "--out", str(out),
        ],
        check=True, capture_output=True, timeout=120,
    )
    return out


def test_exported_bundle_loads_with_declared_k_and_shape(tmp_path):
    spec = load_concept_spec(export_bundle(tmp_path, "modern", 5))
    assert spec.k == 5
    assert spec.shape == (77, 768)
    assert np.isfinite(spec.neutral).all()
    assert spec.concept_label == "modern"
    assert spec.encoder_id == "hash-sim-v1-77x768"


def test_concept_without_antonyms_falls_back_to_neutral(tmp_path):
    from lorashield import antonym_or_neutral

    spec = load_concept_spec(
        export_bundle(tmp_path, "unique-style", 2, encoder="hash-sim-v1-8x16")
    )
    assert spec.absent_antonyms == frozenset({0, 1})
    np.testing.assert_array_equal(antonym_or_neutral(spec, 0), spec.neutral)
