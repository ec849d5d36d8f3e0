"""Minimal metadata.csv reader (item_id first, empty cell = missing)."""

import csv


def load_metadata(path) -> tuple[tuple[str, ...], dict[str, dict]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0].strip() != "item_id":
            raise ValueError(f"{path}: first column must be item_id")
        attributes = tuple(h.strip() for h in header[1:])
        rows: dict[str, dict] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(attributes) + 1:
                raise ValueError(f"{path}:{lineno}: expected {len(attributes) + 1} fields")
            if row[0] in rows:
                raise ValueError(f"{path}:{lineno}: duplicate item id {row[0]!r}")
            rows[row[0]] = {
                attr: (cell if cell != "" else None) for attr, cell in zip(attributes, row[1:])
            }
    for attr in attributes:
        cells = [r[attr] for r in rows.values() if r[attr] is not None]
        if cells and all(_is_number(c) for c in cells):
            for r in rows.values():
                if r[attr] is not None:
                    r[attr] = float(r[attr])
    return attributes, rows


def _is_number(cell: str) -> bool:
    try:
        float(cell)
        return True
    except ValueError:
        return False
