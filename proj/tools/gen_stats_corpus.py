#!/usr/bin/env python3
"""Write the synthetic statistics corpus.

Two modules of 100 functions each. Every module has 19 functions holding
array locals (2 or 3 each) and 81 functions whose only local is a scalar
that never escapes. Together: 200 functions, 38 with arrays, 95 arrays.
"""
import argparse
import pathlib

MODULES = {
    # name: (functions with three arrays, functions with two arrays)
    "corpus_a.cir": (9, 10),
    "corpus_b.cir": (10, 9),
}
FUNCTIONS = 100


def array_function(name, count):
    lines = [f"func {name}(%x: i64) {{", "entry:"]
    for i in range(count):
        lines.append(f"  %obj.buf{i} = alloca 16, align 8, array")
    for i in range(count):
        lines.append(f"  %p{i} = addrof %obj.buf{i}")
        lines.append(f"  store 8, %p{i}, %x")
    lines.append("  %v = load 8, %p0")
    lines.append("  ret %v")
    lines.append("}")
    return lines


def scalar_function(name):
    return [
        f"func {name}(%x: i64) {{",
        "entry:",
        "  %obj.t = alloca 8, align 8",
        "  %p = addrof %obj.t",
        "  %y = add %x, 1",
        "  store 8, %p, %y",
        "  %v = load 8, %p",
        "  ret %v",
        "}",
    ]


def module(threes, twos):
    out = ["# generated by tools/gen_stats_corpus.py", "entry main"]
    counts = [3] * threes + [2] * twos
    names = []
    for i in range(FUNCTIONS - 1):
        name = f"f{i:02d}"
        names.append(name)
        out.append("")
        if i < len(counts):
            out.extend(array_function(name, counts[i]))
        else:
            out.extend(scalar_function(name))
    out.append("")
    out.append("func main() {")
    out.append("entry:")
    out.append("  %x = input 8")
    for i, name in enumerate(names):
        out.append(f"  %r{i} = call {name}(%x)")
    out.append("  ret 0")
    out.append("}")
    return "\n".join(out) + "\n"


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=str(pathlib.Path(__file__).resolve().parent.parent / "fixtures" / "stats"))
    args = ap.parse_args()
    outdir = pathlib.Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    for name, (threes, twos) in MODULES.items():
        (outdir / name).write_text(module(threes, twos))


if __name__ == "__main__":
    main()
