import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from iidm.pipeline.cli import main  # noqa: E402
from iidm.pipeline.config import RunConfig  # noqa: E402
from iidm.pipeline.run import run_ablation, run_pipeline  # noqa: E402

VERDICTS = {}

TINY_INI = """\
[run]
size = 16
n_scenes = 2
n_patches = 4
[distill]
teacher_steps = 2
pair_steps = 2
epochs = 1
[diffusion]
steps = 5
n_samples = 2
[ablation]
steps = 3
"""

# every subcommand, in dependency order
CLI_SEQUENCE = [
    ["gen"], ["distill"], ["train"], ["estimate"], ["baseline"],
    ["eval", "--pred", "{out}/estimate/pred.ras", "--truth", "{out}/scenes/scene_1/truth.ras",
     "--mask", "{out}/scenes/scene_1/mask.ras", "--run-id", "tiny"],
    ["ablate"],
]


def record_verdict(no, ok, detail):
    VERDICTS[no] = (bool(ok), detail)
    print(f"criterion {no}: {'PASS' if ok else 'FAIL'} ({detail})")


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for no in sorted(VERDICTS):
        ok, detail = VERDICTS[no]
        terminalreporter.write_line(f"criterion {no:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def desk_run(tmp_path_factory):
    """Seed-1 desk configuration: the full pipeline, then the 12-row ablation on the same scenes."""
    out = tmp_path_factory.mktemp("desk")
    cfg = RunConfig()
    t0 = time.process_time()
    reports = run_pipeline(cfg, out)
    secs = time.process_time() - t0
    table = run_ablation(cfg, out, distill_dir=out / "distill")
    return {"out": out, "cfg": cfg, "reports": reports, "ablation": table, "pipeline_seconds": secs}


@pytest.fixture(scope="session")
def tiny_cli_runs(tmp_path_factory):
    """Two independent runs of every CLI subcommand on the tiny config."""
    root = tmp_path_factory.mktemp("tiny")
    ini = root / "tiny.ini"
    ini.write_text(TINY_INI)
    outs, codes = [], []
    for k in range(2):
        out = root / f"run{k}"
        run_codes = []
        for cmd in CLI_SEQUENCE:
            args = [a.format(out=out) for a in cmd] + ["--config", str(ini), "--out", str(out), "--seed", "1"]
            run_codes.append(main(args))
        outs.append(out)
        codes.append(run_codes)
    return outs, codes
