"""Law specifications: ``builtin:<name>``, ``file:<path.json>`` or an inline dict."""
from __future__ import annotations

import json
from typing import Union

from .errors import LawSpecError
from .laminations import LaminationLaw
from .leafed import GeometricLeafedLaw, LeafedLaw, TableLeafedLaw
from .multitype import MultitypeLaw, TableMultitypeLaw

BUILTINS = ("lamination", "geometric")


def _builtin(name: str, params: dict):
    if name == "lamination":
        return LaminationLaw()
    if name == "geometric":
        keys = {"mean_type1", "mean_type0", "length1", "length0"}
        extra = set(params) - keys
        if extra:
            raise LawSpecError(f"unknown geometric parameters {sorted(extra)}")
        return GeometricLeafedLaw(**params)
    raise LawSpecError(f"unknown builtin law {name!r} (known: {', '.join(BUILTINS)})")


def law_from_dict(d: dict) -> Union[LeafedLaw, MultitypeLaw]:
    if not isinstance(d, dict) or "kind" not in d:
        raise LawSpecError("law spec must be an object with a 'kind' field")
    kind = d["kind"]
    try:
        if kind == "builtin":
            params = {k: v for k, v in d.items() if k not in ("kind", "name")}
            return _builtin(d.get("name", ""), params)
        if kind == "multitype":
            if d.get("types", "nonneg-int") != "nonneg-int":
                raise LawSpecError("only 'nonneg-int' type encodings are supported")
            rules = {}
            for r in d["rules"]:
                rules[int(r["type"])] = [(float(o["p"]), [int(c) for c in o["children"]])
                                         for o in r["offspring"]]
            return TableMultitypeLaw(rules)
        if kind == "leafed":
            outs = [(float(o["p"]), [(int(b), float(l)) for b, l in o["children"]])
                    for o in d["offspring"]]
            return TableLeafedLaw(outs, declared=d.get("declared"))
    except LawSpecError:
        raise
    except (KeyError, TypeError, ValueError) as err:
        raise LawSpecError(f"malformed {kind} law spec: {err}") from None
    raise LawSpecError(f"unknown law kind {kind!r}")


def parse_law(spec: str) -> Union[LeafedLaw, MultitypeLaw]:
    """Resolve ``builtin:<name>`` or ``file:<path>``."""
    if spec.startswith("builtin:"):
        return _builtin(spec[len("builtin:"):], {})
    if spec.startswith("file:"):
        path = spec[len("file:"):]
        try:
            with open(path) as fh:
                d = json.load(fh)
        except OSError as err:
            raise LawSpecError(f"cannot read law file {path}: {err.strerror}") from None
        except json.JSONDecodeError as err:
            raise LawSpecError(f"law file {path} is not valid JSON: {err}") from None
        return law_from_dict(d)
    raise LawSpecError(f"law spec must start with 'builtin:' or 'file:', got {spec!r}")


def default_x0(law) -> int:
    if isinstance(law, LaminationLaw):
        return 4
    if isinstance(law, TableMultitypeLaw):
        return min(law.rules)
    raise LawSpecError("this law needs an explicit --x0")
