"""Validate shipped configs and designs against the published schema."""
import json
import pathlib
import sys

import jsonschema

root = pathlib.Path(sys.argv[1])
schema = json.loads((root / "schema" / "config.schema.json").read_text())
jsonschema.Draft202012Validator.check_schema(schema)
configs = jsonschema.Draft202012Validator(schema)
design = jsonschema.Draft202012Validator({"$defs": schema["$defs"], "$ref": "#/$defs/design"})

bad = 0
for path, v in [(p, configs) for p in sorted(root.glob("data/configs/*.json"))] + [
    (p, design) for p in sorted(root.glob("data/designs/*.json"))
]:
    for err in v.iter_errors(json.loads(path.read_text())):
        print(f"{path.relative_to(root)}: {'/'.join(map(str, err.path))}: {err.message}")
        bad += 1
    print(f"checked {path.relative_to(root)}")
sys.exit(1 if bad else 0)
