"""Reading and writing datasets, dictionaries, results and run manifests.

File layouts are described in ``docs/formats.md``.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from pathlib import Path

import numpy as np

from .data import DataKind, Dataset, infer_kind, validate_dataset
from .errors import DimensionMismatch, MissingValue, ParseError

MISSING_TOKENS = {"", "na", "nan", "null", "."}
OUTDIR_ENV = "GENESCREEN_OUT"
DEFAULT_OUTDIR = "genescreen_out"


def fmt(x) -> str:
    """Number formatting shared by all writers (17 significant digits)."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    return "%.17g" % x


def default_outdir() -> str:
    return os.environ.get(OUTDIR_ENV, DEFAULT_OUTDIR)


def read_labels(path) -> dict:
    """Sample id to group label (0/1).

    Two layouts are accepted: one ``sample_id<TAB>label`` pair per line
    (an optional header line is skipped), or exactly two lines holding all
    sample ids and then all labels.
    """
    with open(path, newline="") as fh:
        lines = [(i + 1, line.rstrip("\r\n")) for i, line in enumerate(fh)]
    lines = [(n, s) for n, s in lines if s.strip() and not s.startswith("#")]
    if not lines:
        raise ParseError("label file is empty", path)
    rows = [(n, s.split("\t")) for n, s in lines]
    out = {}
    if len(rows) == 2 and len(rows[0][1]) > 2:
        (n_ids, ids), (n_lab, labs) = rows
        if len(ids) != len(labs):
            raise ParseError(f"{len(ids)} sample ids but {len(labs)} labels", path, n_lab)
        pairs = [(n_lab, i, lab) for i, lab in zip(ids, labs)]
    else:
        pairs = []
        for n, parts in rows:
            if len(parts) != 2:
                raise ParseError(f"expected 2 fields, found {len(parts)}", path, n)
            pairs.append((n, parts[0], parts[1]))
        if pairs and pairs[0][2].strip() not in ("0", "1"):
            pairs = pairs[1:]
    for n, sample, lab in pairs:
        lab = lab.strip()
        if lab not in ("0", "1"):
            raise ParseError(f"label {lab!r} is not 0 or 1", path, n)
        if sample in out:
            raise ParseError(f"duplicate sample id {sample!r}", path, n)
        out[sample] = int(lab)
    return out


def read_dataset_tsv(path, labels_path, kind=None) -> Dataset:
    """Load a marker matrix and its sample labels.

    Parameters
    ----------
    path : str or Path
        TSV with header ``marker_id, gene_id, <sample ids...>``.
    labels_path : str or Path
        Group labels, see :func:`read_labels`.
    kind : DataKind or str, optional
        Overrides kind inference (binary when every value is 0 or 1).
    """
    labels = read_labels(labels_path)
    marker_ids, genes, rows = [], [], []
    with open(path, newline="") as fh:
        header = fh.readline().rstrip("\r\n").split("\t")
        if len(header) < 3:
            raise ParseError("header needs marker_id, gene_id and at least one sample", path, 1)
        samples = header[2:]
        n = len(samples)
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\r\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != n + 2:
                raise ParseError(f"expected {n + 2} fields, found {len(parts)}", path, lineno)
            cells = parts[2:]
            try:
                row = np.array(cells, dtype=np.float64)
            except ValueError:
                for c, cell in enumerate(cells):
                    if cell.strip().lower() in MISSING_TOKENS:
                        raise MissingValue(
                            f"{path}:{lineno}: missing value for sample {samples[c]!r}") from None
                    try:
                        float(cell)
                    except ValueError:
                        raise ParseError(f"non-numeric value {cell!r} in column {c + 3}",
                                         path, lineno) from None
                raise
            if np.isnan(row).any():
                c = int(np.flatnonzero(np.isnan(row))[0])
                raise MissingValue(f"{path}:{lineno}: missing value for sample {samples[c]!r}")
            marker_ids.append(parts[0])
            genes.append(parts[1])
            rows.append(row)
    if not rows:
        raise ParseError("no marker rows", path)
    missing = [s for s in samples if s not in labels]
    if missing:
        raise DimensionMismatch(f"no label for sample(s) {', '.join(missing[:5])}")
    values = np.vstack(rows)
    kind = infer_kind(values) if kind is None else DataKind.parse(kind)
    group = np.array([labels[s] for s in samples], dtype=np.int8)
    return validate_dataset(Dataset(values, tuple(marker_ids), tuple(genes), group,
                                    kind, tuple(samples)))


def write_dataset_tsv(data: Dataset, path, labels_path=None):
    """Write a dataset in the layout read by :func:`read_dataset_tsv`."""
    samples = data.sample_ids or tuple(f"s{i + 1}" for i in range(data.n_samples))
    binary = data.kind is DataKind.BINARY
    with open(path, "w", newline="") as fh:
        fh.write("\t".join(("marker_id", "gene_id") + tuple(samples)) + "\n")
        for i in range(data.n_markers):
            row = data.values[i]
            cells = ([str(int(v)) for v in row] if binary else ["%.17g" % v for v in row])
            fh.write("\t".join([data.marker_ids[i], data.gene_of_marker[i]] + cells) + "\n")
    if labels_path is not None:
        with open(labels_path, "w", newline="") as fh:
            fh.write("sample_id\tlabel\n")
            for s, lab in zip(samples, data.group_labels):
                fh.write(f"{s}\t{int(lab)}\n")


def write_table(path, header, rows, delimiter="\t"):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(x) if not isinstance(x, str) else x for x in row])


def write_screen_outputs(result, out_dir):
    """Write posteriors, gene probabilities and optional traces.

    Returns the list of file names written.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_table(out / "posteriors.tsv", ["marker_id", "gene_id", "post_null", "post_null_rb"],
                zip(result.marker_ids, result.gene_of_marker, result.post_null,
                    result.post_null_rb))
    sizes = {}
    for g in result.gene_of_marker:
        sizes[g] = sizes.get(g, 0) + 1
    chain_cols = [f"gene_prob_chain{c + 1}" for c in range(len(result.chains))]
    rows = []
    for j, g in enumerate(result.gene_ids):
        rows.append([g, sizes[g], result.gene_prob[j]]
                    + [c.gene_prob[j] for c in result.chains])
    write_table(out / "gene_probs.tsv", ["gene_id", "n_markers", "gene_prob"] + chain_cols, rows)
    (out / "result.json").write_text(json.dumps(result.to_dict(), indent=1) + "\n")
    files = ["posteriors.tsv", "gene_probs.tsv", "result.json"]
    if result.traces:
        for c, trace in enumerate(result.traces):
            name = f"trace_gene_prob_chain{c + 1}.tsv"
            write_table(out / name, ["sweep"] + list(result.gene_ids),
                        ([s + 1] + list(r) for s, r in enumerate(trace["gene_prob"])))
            files.append(name)
            name = f"trace_null_chain{c + 1}.tsv"
            write_table(out / name, ["sweep"] + list(result.marker_ids),
                        ([s + 1] + [int(v) for v in r]
                         for s, r in enumerate(trace["null_indicator"])))
            files.append(name)
    return files


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return "sha256:" + h.hexdigest()


def write_manifest(out_dir, command, config, seed, inputs, outputs, version,
                   duration, threads=None):
    """Write ``manifest.json``.

    Everything except the ``runtime`` block is a function of the inputs and
    configuration; ``runtime`` holds wall-clock duration and thread count.
    """
    doc = {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": {str(k): file_digest(v) for k, v in sorted(inputs.items())},
        "outputs": sorted(outputs),
        "version": version,
        "runtime": {"duration_seconds": round(duration, 6), "threads": threads},
    }
    path = Path(out_dir) / "manifest.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return doc
