#!/usr/bin/env python3
"""Regenerate docs/config_reference.md from the config dataclasses.

Every config key carries its doc string in the field metadata; this just
renders the table so the page can never drift from the code.
"""

import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from comploc.config import iter_config_docs

HEADER = """# Configuration reference

Generated by `scripts/make_config_reference.py`; do not edit by hand.

Config files are JSON with one object per section, e.g.

```json
{"dataset": {"image_size": 128}, "lfe": {"margin": 1.0}, "seed": 3}
```

Omitted keys keep the defaults below. Top-level keys without a section
prefix sit at the root of the JSON object.
"""


def fmt_default(value):
    if isinstance(value, str):
        return f'`"{value}"`'
    if isinstance(value, tuple):
        return "`" + repr(list(value)) + "`"
    return f"`{value!r}`"


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=os.path.join(os.path.dirname(__file__),
                                                  "..", "docs",
                                                  "config_reference.md"))
    args = ap.parse_args()

    sections = {}
    for section, name, default, doc in iter_config_docs():
        sections.setdefault(section, []).append((name, default, doc))

    lines = [HEADER]
    for section, rows in sections.items():
        title = section if section else "top level"
        lines.append(f"## `{title}`\n")
        lines.append("| key | default | description |")
        lines.append("| --- | --- | --- |")
        for name, default, doc in rows:
            lines.append(f"| `{name}` | {fmt_default(default)} | {doc} |")
        lines.append("")

    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    with open(args.out, "w") as fh:
        fh.write("\n".join(lines))
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
