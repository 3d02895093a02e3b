"""Conversion of LINQS-style citation data into the package's file formats.

``<name>.content`` rows are ``paper_id  attr_1 ... attr_F  class_name`` and
``<name>.cites`` rows are ``cited_id  citing_id``.  Nodes are numbered in
``.content`` order and classes in sorted name order.  Citations that mention
a paper absent from ``.content`` are skipped and counted.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParseError


@dataclass
class LinqsSummary:
    nodes: int
    features: int
    classes: list[str]
    citation_lines: int
    dangling: int
    paths: dict[str, str]


def convert_linqs(content_path, cites_path, out_dir, name: str = "cora") -> LinqsSummary:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ids: dict[str, int] = {}
    rows: list[list[str]] = []
    class_names: list[str] = []
    with open(content_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens:
                continue
            if len(tokens) < 3:
                raise ParseError(f"{content_path}:{lineno}: too few fields")
            if tokens[0] in ids:
                raise ParseError(f"{content_path}:{lineno}: duplicate paper id {tokens[0]}")
            ids[tokens[0]] = len(ids)
            rows.append(tokens[1:-1])
            class_names.append(tokens[-1])
    width = {len(r) for r in rows}
    if len(width) != 1:
        raise ParseError(f"{content_path}: rows have differing attribute counts {sorted(width)}")
    classes = sorted(set(class_names))
    class_id = {c: i for i, c in enumerate(classes)}

    edges: list[tuple[int, int]] = []
    dangling = 0
    lines = 0
    with open(cites_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens:
                continue
            if len(tokens) != 2:
                raise ParseError(f"{cites_path}:{lineno}: expected two paper ids")
            lines += 1
            if tokens[0] not in ids or tokens[1] not in ids:
                dangling += 1
                continue
            edges.append((ids[tokens[1]], ids[tokens[0]]))

    paths = {
        "edges": str(out / f"{name}.edges.tsv"),
        "features": str(out / f"{name}.features.csv"),
        "labels": str(out / f"{name}.labels.tsv"),
    }
    with open(paths["edges"], "w", encoding="utf-8") as fh:
        fh.write(f"# num_nodes={len(ids)}\n")
        for u, v in edges:
            fh.write(f"{u}\t{v}\n")
    with open(paths["features"], "w", encoding="utf-8") as fh:
        for r in rows:
            fh.write(",".join(r) + "\n")
    with open(paths["labels"], "w", encoding="utf-8") as fh:
        for node, cname in enumerate(class_names):
            fh.write(f"{node}\t{class_id[cname]}\n")
    feats = np.asarray(rows[0]) if rows else np.zeros(0)
    return LinqsSummary(len(ids), len(feats), classes, lines, dangling, paths)
