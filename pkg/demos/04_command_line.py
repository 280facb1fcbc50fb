"""The same pipeline through the `introspect` command line.

Run:  python3 demos/04_command_line.py
"""
# %% Each step is one subcommand; exit status 0 means success
import tempfile
from pathlib import Path

from introspect.cli import main

d = Path(tempfile.mkdtemp(prefix="cli_demo_"))


def run(*argv):
    print("$ introspect", " ".join(argv))
    code = main(list(argv))
    assert code == 0, code


run("synth", "--out", str(d / "data"), "--seed", "4", "--images-per-class", "100",
    "--patch-contrast", "1.0")
run("train", "--manifest", str(d / "data" / "manifest.jsonl"), "--model", str(d / "model.json"),
    "--seed", "4", "--iterations", "3")
image = str(sorted((d / "data" / "images").glob("*.ppm"))[-1])
run("predict", "--model", str(d / "model.json"), "--image", image)
run("explore", "--model", str(d / "model.json"), "--image", image, "--out", str(d / "tree"),
    "--write-crops")
run("render-cam", "--model", str(d / "model.json"), "--image", image, "--out", str(d / "cam"))
run("eval", "--model", str(d / "model.json"), "--manifest", str(d / "data" / "manifest.jsonl"),
    "--out", str(d / "eval"))
print((d / "eval" / "report.txt").read_text())

# %% Errors are one line on stderr with a documented exit status
print("missing model ->", main(["predict", "--model", str(d / "nope.json"), "--image", image]))
