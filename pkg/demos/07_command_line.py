"""
Running studies from the command line
=====================================

The ``cr-forchheimer`` command reads an INI file and writes CSV tables plus a
text report. The same entry point is called here in-process on a small
configuration; the files in ``configs/`` hold the larger studies, e.g.::

    cr-forchheimer study --config demos/configs/rates.ini
    cr-forchheimer study --config demos/configs/relaxed_alpha.ini
    cr-forchheimer inequalities --config demos/configs/inequalities.ini

``CR_FORCHHEIMER_THREADS`` sets how many mesh levels run at once; the output
does not depend on it.
"""

import csv
import tempfile
from pathlib import Path

from cr_forchheimer.cli import main

config = """
[model]
case = case1
beta = 1, 10

[discretization]
k = 1

[mesh]
levels = 3, 6
"""

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "small.ini"
    path.write_text(config)
    code = main(["study", "--config", str(path), "--out", str(Path(tmp) / "out")])
    print("exit code", code)
    with open(Path(tmp) / "out" / "iterations.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            print(f"beta={float(row['beta']):g} nx={row['nx']}: {row['iterations']} iterations")
