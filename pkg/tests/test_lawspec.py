import json
from pathlib import Path

import numpy as np
import pytest

from gwforest import LawSpecError, law_from_dict, parse_law
from gwforest.laminations import LaminationLaw
from gwforest.lawspec import default_x0
from gwforest.leafed import GeometricLeafedLaw, TableLeafedLaw
from gwforest.multitype import TableMultitypeLaw

LAWS = Path(__file__).resolve().parents[1] / "laws"


def test_builtins():
    assert isinstance(parse_law("builtin:lamination"), LaminationLaw)
    assert isinstance(parse_law("builtin:geometric"), GeometricLeafedLaw)
    with pytest.raises(LawSpecError, match="unknown builtin"):
        parse_law("builtin:nope")


def test_bundled_files_parse():
    assert isinstance(parse_law(f"file:{LAWS / 'lamination.json'}"), LaminationLaw)
    g = parse_law(f"file:{LAWS / 'geometric.json'}")
    assert isinstance(g, GeometricLeafedLaw)
    assert isinstance(parse_law(f"file:{LAWS / 'two_type.json'}"), TableMultitypeLaw)
    t = parse_law(f"file:{LAWS / 'leafed_table.json'}")
    assert isinstance(t, TableLeafedLaw)
    assert len(t.enumerate()) == 2


def test_round_trip_through_to_spec():
    for spec in (f"file:{LAWS / 'geometric.json'}", f"file:{LAWS / 'two_type.json'}",
                 f"file:{LAWS / 'leafed_table.json'}", "builtin:lamination"):
        law = parse_law(spec)
        again = law_from_dict(json.loads(json.dumps(law.to_spec())))
        assert again.to_spec() == law.to_spec()


def test_multitype_rules_sampled_as_declared():
    law = parse_law(f"file:{LAWS / 'two_type.json'}")
    rng = np.random.default_rng(0)
    counts, kids = law.sample_children(np.ones(20_000, np.int64), rng)
    assert set(np.unique(counts)) <= {0, 2}
    assert np.all(kids == 0)
    assert abs(counts.mean() - 1.0) < 0.03


@pytest.mark.parametrize("d, msg", [
    ([], "kind"),
    ({"kind": "alien"}, "unknown law kind"),
    ({"kind": "multitype", "rules": [{"type": 0}]}, "malformed"),
    ({"kind": "multitype", "types": "strings", "rules": []}, "nonneg-int"),
    ({"kind": "leafed", "offspring": [{"p": 1.0, "children": [[1]]}]}, "malformed"),
    ({"kind": "builtin", "name": "geometric", "sigma": 3}, "unknown geometric"),
])
def test_malformed_specs(d, msg):
    with pytest.raises(LawSpecError, match=msg):
        law_from_dict(d)


def test_file_errors(tmp_path):
    with pytest.raises(LawSpecError, match="cannot read"):
        parse_law(f"file:{tmp_path / 'missing.json'}")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(LawSpecError, match="not valid JSON"):
        parse_law(f"file:{bad}")
    with pytest.raises(LawSpecError, match="must start"):
        parse_law("lamination")


def test_default_x0():
    assert default_x0(LaminationLaw()) == 4
    assert default_x0(parse_law(f"file:{LAWS / 'two_type.json'}")) == 0
    with pytest.raises(LawSpecError):
        default_x0(GeometricLeafedLaw())
