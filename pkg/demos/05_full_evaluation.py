#!/usr/bin/env python3
"""Run the whole evaluation grid: every zoo model under every obfuscation mode.

Each cell obfuscates, verifies output preservation, runs the attack, scores
it, and writes a report. Pass an output directory to keep the artifacts,
otherwise everything lands in a temp dir that is cleaned up afterwards.
"""

import sys
import tempfile
from pathlib import Path

from obflab import RunConfig, run_pipeline


def main():
    if len(sys.argv) > 1:
        out_dir, cleanup = Path(sys.argv[1]), False
    else:
        out_dir, cleanup = Path(tempfile.mkdtemp(prefix="obflab-demo-")), True

    results = run_pipeline(RunConfig(out_dir=out_dir, seed=0))
    failed = [r for r in results if not r.ok]
    print(f"ran {len(results)} cells, {len(failed)} failed")

    print()
    print((out_dir / "summary.txt").read_text())

    if cleanup:
        import shutil

        shutil.rmtree(out_dir)
    else:
        print(f"artifacts kept under {out_dir}/")
        for p in sorted(out_dir.rglob("report.json")):
            print(f"  {p.relative_to(out_dir)}")


if __name__ == "__main__":
    main()
