import json
import subprocess
import sys
from pathlib import Path

SCRIPT = Path(__file__).resolve().parents[1] / "benchmarks" / "bench_kernels.py"


def test_benchmark_script_runs():
    proc = subprocess.run([sys.executable, str(SCRIPT), "--repeat", "1", "--json"],
                          capture_output=True, text=True, timeout=300)
    assert proc.returncode == 0, proc.stderr
    rows = json.loads(proc.stdout[proc.stdout.index("["):])
    assert len(rows) == 4 and all(r["python_s"] > 0 for r in rows)
