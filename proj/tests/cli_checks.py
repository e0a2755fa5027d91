#!/usr/bin/env python3
"""End-to-end checks of the mfg command line: exit codes, outputs, schema."""
import json
import subprocess
import sys
import tempfile
from pathlib import Path

import jsonschema

MFG = sys.argv[1]
SOURCE = Path(sys.argv[2])
SCHEMA = json.loads((SOURCE / "docs" / "report.schema.json").read_text())
CONFIG = SOURCE / "configs" / "default.cfg"
SMALL = ["--override", "time.n_steps=4", "--override", "mc.mc_outer=100"]

failures = []


def run(*args):
    return subprocess.run([MFG, *map(str, args)], capture_output=True, text=True)


def expect(name, cond, detail=""):
    print(("PASS " if cond else "FAIL ") + name)
    if not cond:
        failures.append(name)
        if detail:
            print(detail)


def check_report(name, path):
    try:
        doc = json.loads(Path(path).read_text())
        jsonschema.validate(doc, SCHEMA)
        expect(name, True)
        return doc
    except (OSError, ValueError, jsonschema.ValidationError) as e:
        expect(name, False, str(e))
        return None


with tempfile.TemporaryDirectory() as tmp:
    tmp = Path(tmp)

    r = run("validate", CONFIG)
    expect("validate exits 0", r.returncode == 0, r.stderr)
    expect("validate prints ok", r.stdout.splitlines()[:1] == ["ok"], r.stdout)
    expect("validate prints constants", "lambda" in r.stdout and "mu" in r.stdout, r.stdout)

    r = run("converge", CONFIG, "--study", "bogus")
    expect("bogus study exits 2", r.returncode == 2, r.stderr)
    expect("bogus study prints usage", "study" in r.stderr, r.stderr)

    r = run("validate", tmp / "missing.cfg")
    expect("missing config exits 2", r.returncode == 2, r.stderr)

    r = run("forward", CONFIG, "--bogus-flag")
    expect("unknown flag exits 2", r.returncode == 2, r.stderr)

    r = run("forward", CONFIG, "--override", "model.nope=1")
    expect("unknown override key exits 2", r.returncode == 2, r.stderr)

    r = run("forward", CONFIG, "--out", tmp / "no" / "such" / "dir" / "r.json")
    expect("unwritable out exits 2", r.returncode == 2, r.stderr)

    bad = tmp / "bad.cfg"
    bad.write_text(CONFIG.read_text().replace("beta = 1", "beta = 3"))
    r = run("validate", bad)
    expect("mu >= lambda config exits 2", r.returncode == 2, r.stderr)

    out = tmp / "r.json"
    r = run("converge", CONFIG, "--study", "saddle", "--n-list", "4,8,16", "--reps", 100, "--out", out, *SMALL)
    expect("converge runs", r.returncode in (0, 1), r.stderr)
    doc = check_report("converge report matches schema", out)
    if doc is not None:
        expect("converge report has slope and pass", "slope" in doc and isinstance(doc["pass"], bool))
        expect("converge exit code reflects pass", r.returncode == (0 if doc["pass"] else 1))
        expect("overrides recorded", doc["overrides"] == ["time.n_steps=4", "mc.mc_outer=100"], str(doc["overrides"]))
    csv = (tmp / "r.csv").read_text().splitlines()
    expect("converge CSV header", csv[0] == "study,N,reps,err_mean,err_std,excluded", csv[0])
    expect("converge CSV rows", len(csv) == 4, str(len(csv)))

    r = run("converge", CONFIG, "--study", "saddle", "--n-list", "4,8,16", "--reps", 100, "--out", tmp / "r2.json", *SMALL)
    expect("identical invocation gives identical CSV", (tmp / "r.csv").read_bytes() == (tmp / "r2.csv").read_bytes())

    r = run("converge", CONFIG, "--study", "saddle", "--n-list", "4,8,16", "--reps", 100, "--seed", 5,
            "--out", tmp / "r3.json", *SMALL)
    doc = check_report("seed override report matches schema", tmp / "r3.json")
    if doc is not None:
        expect("seed override recorded", doc["seed"] == 5)

    r = run("converge", CONFIG, "--study", "saddle", "--n-list", "4,8", "--reps", 100, *SMALL)
    expect("two-point n-list exits 2", r.returncode == 2, r.stderr)

    r = run("verify", CONFIG, "--n", 2, "--perturbations", 20, "--delta", 0.5, "--out", tmp / "v", *SMALL)
    expect("verify exits 0", r.returncode == 0, r.stdout + r.stderr)
    check_report("verify report matches schema", tmp / "v.json")

    r = run("verify", CONFIG, "--perturbations", 5, *SMALL)
    expect("too few perturbations exits 2", r.returncode == 2, r.stderr)

    for sub in ("forward", "bsde", "saddle"):
        r = run(sub, CONFIG, "--n", 4, "--out", tmp / sub, *SMALL)
        expect(f"{sub} exits 0", r.returncode == 0, r.stderr)
        check_report(f"{sub} report matches schema", tmp / f"{sub}.json")

    r = run("limit", CONFIG, "--out", tmp / "limit", *SMALL)
    expect("limit exits 0", r.returncode == 0, r.stderr)
    check_report("limit report matches schema", tmp / "limit.json")

    r = run("limit", CONFIG, "--crosscheck", "--out", tmp / "cross", *SMALL)
    expect("crosscheck exits 0", r.returncode == 0, r.stderr)
    check_report("crosscheck report matches schema", tmp / "cross.json")

    r = run("validate", CONFIG, "--out", tmp / "val")
    check_report("validate report matches schema", tmp / "val.json")

print(f"{len(failures)} failure(s)")
sys.exit(1 if failures else 0)
