"""Runs each CLI command and validates its JSON report against the shipped schema."""

import json
import pathlib
import subprocess
import sys

import jsonschema
from referencing import Registry, Resource

TINY = ["--layers", "1", "--hidden", "16", "--attn-heads", "2", "--vocab", "8", "--context", "8",
        "--task-vocab", "8", "--length", "8", "--batch", "2"]

CASES = [
    ("gradcheck", ["gradcheck", "--trials", "10"], 0),
    ("gradcheck", ["gradcheck", "--variant", "rmsnorm", "--dims", "2", "--trials", "4"], 0),
    ("probe", ["probe", "--name", "scale_insensitivity,dyt_rmsnorm_ode,dot_variance,cost",
               "--dims", "16", "--heads", "2"], 0),
    ("train", ["train", "--steps", "3", "--wall-time"] + TINY, 0),
    ("train", ["train", "--steps", "0"] + TINY, 0),
    ("train", ["train", "--steps", "3", "--lr", "1e300", "--warmup", "0", "--clip", "0"] + TINY, 1),
    ("compare", ["compare", "--variant-a", "seednorm", "--variant-b", "dyt", "--steps", "3"] + TINY, 0),
    ("cost", ["cost"], 0),
    ("cost", ["cost", "--layers", "2", "--hidden", "16", "--heads", "4", "--enumerate"], 0),
]


def main() -> int:
    cli, schema_dir = sys.argv[1], pathlib.Path(sys.argv[2])
    schemas = {p.name: json.loads(p.read_text()) for p in schema_dir.glob("*.schema.json")}
    registry = Registry().with_resources(
        (name, Resource.from_contents(s)) for name, s in schemas.items())
    failures = 0
    for name, args, want_code in CASES:
        proc = subprocess.run([cli] + args, capture_output=True, text=True, check=False)
        label = " ".join(args)
        if proc.returncode != want_code:
            print(f"FAIL {label}: exit {proc.returncode}, expected {want_code}\n{proc.stderr}")
            failures += 1
            continue
        schema = schemas[f"{name}.schema.json"]
        validator = jsonschema.Draft202012Validator(schema, registry=registry)
        errors = list(validator.iter_errors(json.loads(proc.stdout)))
        for e in errors:
            print(f"FAIL {label}: {e.json_path}: {e.message}")
        failures += bool(errors)
        if not errors:
            print(f"ok   {label}")
    # The schemas must reject a truncated report.
    if jsonschema.Draft202012Validator(schemas["cost.schema.json"]).is_valid({"command": "cost"}):
        print("FAIL cost schema accepted a report without counts")
        failures += 1
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
