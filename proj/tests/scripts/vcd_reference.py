#!/usr/bin/env python3
"""Reference VCD -> CSV converter built on vcdvcd.

One row per timestamp carrying a change, one column per declared reference
(bit ranges dropped from the name), values forward-filled, 'x' * width
before a signal's first change, short vectors left-extended per IEEE 1364.

usage: vcd_reference.py in.vcd > out.csv
"""
import re
import sys

import vcdvcd


def extend(value, width):
    if len(value) >= width:
        return value
    pad = value[0] if value[0] in "xXzZ" else "0"
    return pad * (width - len(value)) + value


def main(path):
    vcd = vcdvcd.VCDVCD(path)
    refs = list(vcd.references_to_ids.items())
    names = [re.sub(r"\[[^\]]*\]$", "", r) for r, _ in refs]
    changes = {}
    for ident, sig in vcd.data.items():
        width = int(sig.size)
        for t, v in sig.tv:
            changes.setdefault(t, []).append((ident, extend(v.lower(), width)))
    current = {ident: "x" * int(sig.size) for ident, sig in vcd.data.items()}
    out = ["time," + ",".join(names)]
    for t in sorted(changes):
        for ident, v in changes[t]:
            current[ident] = v
        out.append(str(t) + "," + ",".join(current[i] for _, i in refs))
    sys.stdout.write("\n".join(out) + "\n")


if __name__ == "__main__":
    main(sys.argv[1])
