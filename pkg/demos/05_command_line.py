# %% [markdown]
# # The command line
#
# `lambdaunet <command>` (or `python -m lambdaunet`) wraps the library.  The
# same entry point is callable from Python, which this script does with
# small settings.  Each command leaves a run.json manifest in its output
# directory.

# %%
import json
import tempfile
from pathlib import Path

from lambdaunet.cli import main

work = Path(tempfile.mkdtemp())
data, run = work / "data", work / "run"

main(["gen", "--out", str(data), "--cases", "10", "--geometry", "8,32,32", "--seed", "1"])
main(["train", "--data", str(data), "--out", str(run), "--variant", "2.5d", "--epochs", "3",
      "--levels", "2", "--base-channels", "8", "--batch-segments", "4", "--lr", "2e-3",
      "--verbose"])
main(["eval", "--model", str(run / "model"), "--data", str(data), "--out", str(work / "eval")])

# %%
print(json.dumps(json.loads((run / "run.json").read_text())["artifacts"], indent=2))

# %% [markdown]
# Options can come from a JSON file; flags on the command line win.

# %%
cfg = work / "bench.json"
cfg.write_text(json.dumps({"shapes": "1x4x16x16x8", "reps": 2, "k": 4, "v": 8}))
main(["bench", "--config", str(cfg), "--reps", "1", "--out", str(work / "bench")])

# %% [markdown]
# Exit codes: 0 success, 2 usage, 3 data or format problems, 4 numeric
# failure (for example a correctness suite that does not pass).

# %%
print("even Tk ->", main(["ablate", "--data", str(data), "--Tk", "3,4"]))
print("missing checkpoint ->", main(["eval", "--model", str(work / "nope"), "--data", str(data),
                                      "--out", str(work / "e2")]))
