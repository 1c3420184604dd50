import os
import re

import torch

torch.set_num_threads(int(os.environ.get("CONDSEG_THREADS", "1")))


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE

    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        def key(line):
            num, suffix = re.search(r"criterion (\d+)(\w*)", line).groups()
            return int(num), suffix

        for line in sorted(ACCEPTANCE, key=key):
            terminalreporter.write_line(line)
