"""Structured data flattened to text: tables, database schemas, sudoku grids.

Table cells join with " : " and rows with " | "; database schemas render as
``| db | table : col ( mentioned rows ), col ...``; sudoku grids use the same
row/cell separators over 81 digits where 0 marks a blank.
"""

from __future__ import annotations

import json

import numpy as np

from ..errors import BadSudokuText, EmptyStruct, RaggedTable


def table_to_text(rows: list[list[str]]) -> str:
    if not rows:
        raise EmptyStruct("table has no rows")
    width = len(rows[0])
    if width == 0:
        raise EmptyStruct("table has empty rows")
    for r in rows:
        if len(r) != width:
            raise RaggedTable(f"row width {len(r)} != {width}")
    return " | ".join(" : ".join(str(c) for c in row) for row in rows)


def database_to_text(db: dict) -> str:
    """``{"name": str, "tables": [{"name", "columns", "mentioned_rows"?}]}``."""
    name = db.get("name")
    tables = db.get("tables")
    if not name or not tables:
        raise EmptyStruct("database needs a name and at least one table")
    parts = [f"| {name} |"]
    rendered_tables = []
    for table in tables:
        cols = table.get("columns") or []
        if not cols:
            raise EmptyStruct(f"table '{table.get('name')}' has no columns")
        mentioned = {c: v for c, v in (table.get("mentioned_rows") or {}).items()}
        col_strs = []
        for col in cols:
            if col in mentioned and mentioned[col]:
                vals = ", ".join(str(v) for v in mentioned[col])
                col_strs.append(f"{col} ( {vals} )")
            else:
                col_strs.append(str(col))
        rendered_tables.append(f"{table['name']} : " + ", ".join(col_strs))
    return parts[0] + " " + " ".join(rendered_tables)


def parse_struct_cell(cell: str):
    """Dataset cells hold JSON: nested list => table, object => database."""
    value = json.loads(cell)
    if isinstance(value, list):
        return value
    if isinstance(value, dict):
        return value
    raise EmptyStruct(f"cannot interpret struct cell {cell!r}")


def struct_to_text(value) -> str:
    if isinstance(value, dict):
        return database_to_text(value)
    return table_to_text(value)


def sudoku_to_text(grid) -> str:
    arr = np.asarray(grid, dtype=int)
    if arr.shape != (9, 9):
        raise EmptyStruct(f"sudoku grid must be 9x9, got {arr.shape}")
    if arr.min() < 0 or arr.max() > 9:
        raise EmptyStruct("sudoku digits must lie in [0, 9]")
    return " | ".join(" : ".join(str(d) for d in row) for row in arr)


def text_to_sudoku(text: str) -> np.ndarray:
    rows = [r.strip() for r in text.split("|")]
    if len(rows) != 9:
        raise BadSudokuText(f"expected 9 rows, got {len(rows)}")
    grid = np.zeros((9, 9), dtype=int)
    for i, row in enumerate(rows):
        cells = [c.strip() for c in row.split(":")]
        if len(cells) != 9:
            raise BadSudokuText(f"row {i} has {len(cells)} cells")
        for j, cell in enumerate(cells):
            if not cell.isdigit() or not 0 <= int(cell) <= 9:
                raise BadSudokuText(f"bad digit {cell!r} at row {i} col {j}")
            grid[i, j] = int(cell)
    return grid
