import pytest

from helpers import synth_fixture
from lorashield.concepts import save_concept_spec, save_probe_set
from lorashield.container import write_container_file


@pytest.fixture(scope="session")
def desk_kit(tmp_path_factory):
    """Small on-disk fixture kit: 4-layer adapter, base, bundle, probes."""
    root = tmp_path_factory.mktemp("desk_kit")
    base_map, adapter_map, spec, probes = synth_fixture(
        21, blocks=2, n=32, m=32, rank=4, L=6, k=3
    )
    paths = {
        "adapter": root / "adapter.st",
        "base": root / "base.st",
        "concept": root / "concept.st",
        "probes": root / "probes.st",
        "root": root,
    }
    write_container_file(adapter_map, paths["adapter"])
    write_container_file(base_map, paths["base"])
    save_concept_spec(spec, paths["concept"])
    save_probe_set(probes, paths["probes"])
    return paths
