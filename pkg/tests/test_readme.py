"""The README quick-start snippet must run exactly as printed."""

import re
from pathlib import Path


def test_quickstart_snippet_runs():
    text = (Path(__file__).resolve().parents[1] / "README.md").read_text()
    code = re.search(r"## Quick start \(library\)\n\n```python\n(.*?)```",
                     text, re.S).group(1)
    exec(compile(code, "README-snippet", "exec"), {})
