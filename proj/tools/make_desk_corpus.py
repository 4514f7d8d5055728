#!/usr/bin/env python3
"""Build the desk-scale English corpus used by the acceptance suite.

Text comes from the Python documentation bundled with the interpreter
(pydoc topics plus standard-library module docstrings). Output is lowercased,
whitespace-tokenized, one sentence per line, split into train/valid/test.
"""
import argparse
import ast
import pathlib
import re
import sys
import sysconfig

import pydoc_data.topics

TOKEN = re.compile(r"[a-z]+(?:[-'][a-z]+)*|[0-9]+|[.,;:!?()]")
SENT_END = {".", "!", "?"}


def paragraphs():
    for key in sorted(pydoc_data.topics.topics):
        yield from pydoc_data.topics.topics[key].split("\n\n")
    stdlib = pathlib.Path(sysconfig.get_paths()["stdlib"])
    for path in sorted(stdlib.glob("*.py")) + sorted(stdlib.glob("*/*.py")):
        if "test" in path.parts or "idlelib" in path.parts:
            continue
        try:
            tree = ast.parse(path.read_text(encoding="utf-8"))
        except (SyntaxError, UnicodeDecodeError):
            continue
        for node in ast.walk(tree):
            if isinstance(node, (ast.Module, ast.ClassDef, ast.FunctionDef)):
                doc = ast.get_docstring(node)
                if doc:
                    yield from doc.split("\n\n")


def sentences():
    for para in paragraphs():
        lines = [l.strip() for l in para.splitlines()]
        # skip code listings and tables
        if any(l.startswith((">>>", "...", "+", "=", "|", "$")) for l in lines):
            continue
        text = " ".join(lines).lower()
        words = TOKEN.findall(text)
        if len(words) < 6 or sum(w.isalpha() for w in words) < 0.7 * len(words):
            continue
        cur = []
        for w in words:
            cur.append("N" if w.isdigit() else w)
            if w in SENT_END:
                if len(cur) >= 4:
                    yield cur
                cur = []


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out-dir", default="tests/data/desk")
    ap.add_argument("--train-tokens", type=int, default=100_000)
    ap.add_argument("--eval-tokens", type=int, default=10_000)
    args = ap.parse_args()
    out = pathlib.Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seen = set()
    sents = []
    for s in sentences():
        key = " ".join(s)
        if key not in seen:
            seen.add(key)
            sents.append(key)
    # interleave so every split samples the whole source
    splits = {"train": [], "valid": [], "test": []}
    budget = {"train": args.train_tokens, "valid": args.eval_tokens, "test": args.eval_tokens}
    counts = dict.fromkeys(splits, 0)
    for i, s in enumerate(sents):
        name = "valid" if i % 12 == 5 else "test" if i % 12 == 11 else "train"
        if counts[name] < budget[name]:
            splits[name].append(s)
            counts[name] += len(s.split()) + 1
    for name, lines in splits.items():
        (out / f"{name}.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
        print(name, counts[name], "tokens", file=sys.stderr)


if __name__ == "__main__":
    main()
