"""Scenario schema: defaults, validation messages, model construction."""
import json

import numpy as np
import pytest

from sclab.config import DEFAULTS, SCHEMA_VERSION, load_scenario, validate
from sclab.errors import ConfigError


def minimal_doc(**overrides):
    doc = {
        "schema_version": SCHEMA_VERSION,
        "name": "unit",
        "model": {"family": "free", "dim": 1},
        "energy": {"E": 1.0},
        "h_ladder": [0.2, 0.1],
        "grid": {"L": 8.0, "cap_width": 2.5},
    }
    doc.update(overrides)
    return doc


def test_minimal_document_and_defaults():
    scn = validate(minimal_doc())
    assert scn.name == "unit"
    assert scn.seed == DEFAULTS["seed"]
    assert scn.interval == DEFAULTS["energy.interval"]
    assert scn.sigma == DEFAULTS["regions.sigma"]
    assert scn.eps_factors == DEFAULTS["solver.eps_factors"]
    assert scn.n_max == DEFAULTS["grid.n_max"]
    assert scn.fourier_convention == "plain"
    assert scn.h_ladder == (0.2, 0.1)
    assert scn.commands == ()
    assert scn.raw["name"] == "unit"


@pytest.mark.parametrize("mutate, field", [
    (lambda d: d.pop("schema_version"), "schema_version"),
    (lambda d: d.update(schema_version=99), "schema_version"),
    (lambda d: d["model"].pop("family"), "model.family"),
    (lambda d: d["model"].update(family="box"), "model.family"),
    (lambda d: d["model"].update(dim=3), "model.dim"),
    (lambda d: d["energy"].pop("E"), "energy.E"),
    (lambda d: d["energy"].update(E=-1.0), "energy.E"),
    (lambda d: d["energy"].update(interval=[1.1, 0.9]), "energy.interval"),
    (lambda d: d.update(h_ladder=[0.1, 0.2]), "h_ladder"),
    (lambda d: d.update(h_ladder=[0.1, -0.2]), "h_ladder[1]"),
    (lambda d: d["grid"].pop("L"), "grid.L"),
    (lambda d: d["grid"].update(cap_width=9.0), "grid.cap_width"),
    (lambda d: d["grid"].update(order=3), "grid.order"),
    (lambda d: d.update(regions={"sigma": 1.5}), "regions.sigma"),
    (lambda d: d.update(regions={"delta": 0.4}), "regions.delta"),
    (lambda d: d.update(source={"kind": "sphere"}), "source.kind"),
    (lambda d: d.update(measure={"fourier_convention": "angular"}),
     "measure.fourier_convention"),
    (lambda d: d.update(solver={"eps_factors": [1e-1, 1e-2]}),
     "solver.eps_factors"),
    (lambda d: d.update(commands=["fly"]), "commands[0]"),
    (lambda d: d.update(seed=-1), "seed"),
    (lambda d: d["model"].update(v2=[{"center": 0.0}]), "model.v2[0].amp"),
])
def test_validation_reports_dotted_field(mutate, field):
    doc = minimal_doc()
    mutate(doc)
    with pytest.raises(ConfigError) as exc:
        validate(doc)
    assert exc.value.field == field
    assert f"config field '{field}'" in str(exc.value)


def test_cross_field_rules():
    doc = minimal_doc()
    doc["model"] = {"family": "double_bump", "dim": 2}
    with pytest.raises(ConfigError) as exc:
        validate(doc)
    assert exc.value.field == "model.dim"
    doc = minimal_doc()
    doc["model"] = {"family": "ring", "dim": 1}
    with pytest.raises(ConfigError) as exc:
        validate(doc)
    assert exc.value.field == "model.dim"


def test_build_model_families():
    scn = validate(minimal_doc())
    assert scn.build_model().is_free

    doc = minimal_doc()
    doc["model"] = {"family": "double_bump", "dim": 1,
                    "params": {"amp": 2.0, "sep": 2.0, "width": 1.0},
                    "v2": [{"amp": 0.8, "center": 0.0, "width": 1.0}]}
    m = validate(doc).build_model()
    assert m.name == "double-bump"
    assert np.isclose(m.v2(np.zeros((1, 1)))[0], 0.8)
    assert np.isclose(m.v1(np.array([[2.0]]))[0], 2.0 + 2.0 * np.exp(-16.0))

    doc = minimal_doc()
    doc["model"] = {"family": "ring", "dim": 2, "params": {"amp": 1.5,
                                                           "r0": 2.0}}
    ring = validate(doc).build_model()
    assert ring.dim == 2
    on_ring = np.array([[2.0, 0.0]])
    assert np.isclose(ring.v1(on_ring)[0], 1.5)


def test_v2_term_shapes():
    doc = minimal_doc()
    doc["model"]["v2"] = [{"amp": 0.5, "center": [0.0, 0.0], "width": 1.0}]
    with pytest.raises(ConfigError) as exc:
        validate(doc)
    assert exc.value.field == "model.v2[0].center"
    doc = minimal_doc()
    doc["model"] = {"family": "free", "dim": 2,
                    "v2": [{"amp": 0.5, "center": [0.0, 0.0],
                            "width": [1.0, 2.0]}]}
    scn = validate(doc)
    assert scn.v2_terms[0].widths == (1.0, 2.0)


def test_load_scenario_file_errors(tmp_path):
    missing = tmp_path / "nope.json"
    with pytest.raises(ConfigError) as exc:
        load_scenario(str(missing))
    assert exc.value.field == "<file>"
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    with pytest.raises(ConfigError) as exc:
        load_scenario(str(bad))
    assert "invalid JSON" in str(exc.value)
    good = tmp_path / "good.json"
    good.write_text(json.dumps(minimal_doc()), encoding="utf-8")
    assert load_scenario(str(good)).name == "unit"
