//! Matplotlib script written next to each run's CSV.

use std::path::Path;

/// Script plotting `e1`, `tau` and, when logged, `V` and `P` from `csv_name`
/// (resolved relative to the script's own directory).
pub fn plot_script(csv_name: &str, m: usize, deg: bool, lyapunov: bool) -> String {
    let scale = if deg { "1.0" } else { "180.0 / math.pi" };
    let panels = if lyapunov { 3 } else { 2 };
    let mut s = format!(
        r#"import csv
import math
import os

import matplotlib.pyplot as plt

HERE = os.path.dirname(os.path.abspath(__file__))
CSV = os.path.join(HERE, {csv:?})
M = {m}
ANGLE = {scale}

with open(CSV, newline="") as fh:
    rows = list(csv.DictReader(fh))
t = [float(r["t"]) for r in rows]

fig, ax = plt.subplots({panels}, 1, sharex=True, figsize=(8, {height}))
for i in range(1, M + 1):
    ax[0].plot(t, [float(r[f"e1_{{i}}"]) * ANGLE for r in rows], label=f"e1_{{i}}")
    ax[1].plot(t, [float(r[f"tau_{{i}}"]) for r in rows], label=f"tau_{{i}}")
ax[0].set_ylabel("tracking error [deg]")
ax[1].set_ylabel("control input")
"#,
        csv = csv_name,
        height = 3 * panels,
    );
    if lyapunov {
        s.push_str(
            r#"for name in ("V", "P"):
    ax[2].plot(t, [float(r[name]) for r in rows], label=name)
ax[2].set_ylabel("Lyapunov terms")
"#,
        );
    }
    s.push_str(
        r#"for a in ax:
    a.grid(True)
    a.legend(loc="upper right")
ax[-1].set_xlabel("t [s]")
fig.tight_layout()
fig.savefig(os.path.splitext(CSV)[0] + ".png", dpi=150)
"#,
    );
    s
}

/// `run.csv` -> `run.plot.py`.
pub fn script_path(csv: &Path) -> std::path::PathBuf {
    csv.with_extension("plot.py")
}
