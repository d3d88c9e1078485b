import numpy as np
import pytest
import yaml

from tensegrity import builtins
from tensegrity.structure_file import (StructureFileError, dump_structure, load_structure,
                                       parse_structure)
from tensegrity.topology import build_structure

TBAR_YAML = """
name: tbar
nodes: [[0, 0, 0], [3, 0, 0], [0, 0, 4], [3, 0, 4]]
bar_defaults: {radius: 0.05, density: 500}
bars: [[1, 4], [2, 3]]
strings:
  - [1, 3, 100, 3.6]
  - [2, 4, 100, 3.6]
  - {nodes: [3, 4], stiffness: 100}
  - {nodes: [1, 2], stiffness: 100, rest_fraction: 1.0}
fixed_nodes: [1, 2]
"""


def test_parse_matches_builtin():
    d = parse_structure(yaml.safe_load(TBAR_YAML))
    ref = builtins.builtin_tbar()
    st_ = d.structure
    assert not d.compressible
    np.testing.assert_array_equal(st_.nodes, ref.nodes)
    np.testing.assert_array_equal(st_.bar_connectivity, ref.bar_connectivity)
    np.testing.assert_array_equal(st_.string_connectivity, ref.string_connectivity)
    np.testing.assert_allclose(st_.bar_masses, ref.bar_masses)
    np.testing.assert_allclose(st_.string_rest_lengths, ref.string_rest_lengths)
    assert build_structure(st_).A.shape == (6, 12)


def test_one_based_ids():
    doc = yaml.safe_load(TBAR_YAML)
    doc["bars"] = [[0, 3], [2, 3]]
    with pytest.raises(StructureFileError):
        parse_structure(doc)
    doc["bars"] = [[1, 5], [2, 3]]
    with pytest.raises(StructureFileError):
        parse_structure(doc)


@pytest.mark.parametrize("path, key", [((), "colour"), (("bar_defaults",), "length"),
                                       (("strings", 2), "tension")])
def test_unknown_keys_rejected(path, key):
    doc = yaml.safe_load(TBAR_YAML)
    target = doc
    for p in path:
        target = target[p]
    target[key] = 1
    with pytest.raises(StructureFileError, match="unknown keys"):
        parse_structure(doc)


def test_string_from_modulus_and_point_masses_and_pins():
    doc = yaml.safe_load(TBAR_YAML)
    doc["nodes"].append([1.5, 0, -1])
    doc["strings"].append({"nodes": [1, 5], "youngs_modulus": 2e9, "radius": 1e-3})
    doc["point_masses"] = [{"node": 5, "mass": 1.0}]
    doc["pinned_coordinates"] = [[5, "y"]]
    doc["gravity"] = [0, 0, -9.806]
    st_ = parse_structure(doc).structure
    L = np.hypot(1.5, 1.0)
    assert st_.string_stiffness[-1] == pytest.approx(2e9 * np.pi * 1e-6 / L)
    assert st_.pinned_coordinates == ((4, 1),)
    model = build_structure(st_)
    assert model.A.shape[0] == 7
    assert model.G[14] == pytest.approx(-9.806)


def test_compressible_block():
    doc = yaml.safe_load(TBAR_YAML)
    doc["compressible"] = {"material": "hdpe", "poisson_ratio": 0.4}
    d = parse_structure(doc)
    assert d.compressible
    assert d.material.density == 960.0 and d.material.poisson_ratio == 0.4
    doc["compressible"] = {"material": "unobtainium"}
    with pytest.raises(StructureFileError):
        parse_structure(doc)


def test_missing_fields():
    with pytest.raises(StructureFileError):
        parse_structure({"bars": []})
    doc = yaml.safe_load(TBAR_YAML)
    del doc["bar_defaults"]
    with pytest.raises(StructureFileError, match="radius"):
        parse_structure(doc)


def test_round_trip(tmp_path, arm_structure):
    path = tmp_path / "arm.yaml"
    dump_structure(arm_structure, path)
    back = load_structure(path).structure
    for field in ("nodes", "bar_connectivity", "string_connectivity", "bar_masses",
                  "bar_radii", "string_stiffness", "string_rest_lengths", "gravity"):
        np.testing.assert_array_equal(getattr(back, field), getattr(arm_structure, field))
    a, b = build_structure(back), build_structure(arm_structure)
    np.testing.assert_array_equal(a.A, b.A)
    np.testing.assert_array_equal(a.M, b.M)


def test_bad_yaml(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("nodes: [[0, 0, 0]\n")
    with pytest.raises(StructureFileError):
        load_structure(path)
