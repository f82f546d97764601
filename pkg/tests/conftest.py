import json
import logging
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]
ARTIFACTS = ROOT / "artifacts"
VERDICTS: list[str] = []

log = logging.getLogger(__name__)


def record_verdict(number: int, ok: bool, detail: str) -> str:
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    VERDICTS.append(line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def trained_run(tmp_path_factory) -> Path:
    """Run directory of the committed training run; retrains from its config when absent."""
    run = ARTIFACTS / "train"
    if (run / "checkpoint" / "manifest.txt").is_file():
        return run
    from unimap.harness.config import from_dict
    from unimap.harness.studies import cmd_train

    data = json.loads((ARTIFACTS / "train.json").read_text())
    data["out"] = str(tmp_path_factory.mktemp("retrain") / "train")
    log.warning("no committed checkpoint; training from %s (about an hour)", ARTIFACTS / "train.json")
    return cmd_train(from_dict(data)).parent


@pytest.fixture(scope="session")
def trained_model(trained_run):
    from unimap.denoiser import load_checkpoint

    return load_checkpoint(trained_run / "checkpoint")
