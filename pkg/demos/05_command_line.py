"""The ``wete`` command line, end to end, in a scratch directory.

Run: python3 demos/05_command_line.py
"""
import subprocess
import sys
import tempfile
from pathlib import Path

import numpy as np

rng = np.random.default_rng(3)
work = Path(tempfile.mkdtemp(prefix="wete-demo-"))
sides = rng.integers(2, size=200)
(work / "corpus.txt").write_text(
    "\n".join(" ".join(f"{'ab'[s]}{rng.integers(15)}" for _ in range(25)) for s in sides) + "\n")
(work / "labels.txt").write_text("\n".join("ab"[s] for s in sides) + "\n")
(work / "run.cfg").write_text(f"""\
# scratch-mode run on a toy corpus
mode = scratch
corpus = {work / 'corpus.txt'}
labels = {work / 'labels.txt'}
topics = 4
embed_dim = 8
trunk_width = 64
epochs = 20
batch_size = 25
lr = 0.01
output_dir = {work / 'out'}
""")


def wete(*args):
    cmd = [sys.executable, "-m", "wete", "-q", *args]
    print("$ wete", " ".join(args))
    out = subprocess.run(cmd, capture_output=True, text=True, check=True).stdout
    print(out)


cfg = str(work / "run.cfg")
ckpt = str(work / "out" / "model.wete")
wete("train", "--config", cfg)
wete("eval", "--config", cfg, "--checkpoint", ckpt)
wete("topics", "--checkpoint", ckpt, "--n-words", "6")
wete("nearest", "--checkpoint", ckpt, "a0", "-k", "4")
wete("infer", "--config", cfg, "--checkpoint", ckpt, "--out", str(work / "theta.csv"))
print((work / "theta.csv").read_text().splitlines()[:3])
print("files in", work / "out", sorted(p.name for p in (work / "out").iterdir()))
