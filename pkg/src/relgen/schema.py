"""Relational schema metadata: column roles, table relationships, and the
dependency graph that training and sampling iterate over.

The metadata document is JSON with top-level ``tables`` (mapping table name
-> {"columns": [{"name", "kind", "ref"?}]}) and ``relationships``
([{"parent", "child", "kind", "foreign_key"}]).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

COLUMN_KINDS = ("numerical", "categorical", "discrete", "primary_key", "foreign_key")
RELATIONSHIP_KINDS = ("one_to_one", "one_to_many")


class MetadataParseError(ValueError):
    """Raised when a metadata document is structurally malformed."""


class SchemaError(ValueError):
    """Raised when metadata violates a schema invariant."""


@dataclass(frozen=True)
class ColumnSpec:
    """A single column: its name, role, and (for foreign keys) the parent table."""

    name: str
    kind: str
    referenced_table: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in COLUMN_KINDS:
            raise SchemaError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == "foreign_key" and not self.referenced_table:
            raise SchemaError(f"foreign key column {self.name!r} needs a referenced table")
        if self.kind != "foreign_key" and self.referenced_table is not None:
            raise SchemaError(f"column {self.name!r}: only foreign keys may reference a table")

    @property
    def is_key(self) -> bool:
        return self.kind in ("primary_key", "foreign_key")


@dataclass(frozen=True)
class Relationship:
    """A directed parent -> child link realized by one foreign-key column."""

    parent: str
    child: str
    kind: str
    foreign_key_column: str

    def __post_init__(self) -> None:
        if self.kind not in RELATIONSHIP_KINDS:
            raise SchemaError(f"relationship {self.parent}->{self.child}: unknown kind {self.kind!r}")
        if self.parent == self.child:
            raise SchemaError(f"table {self.parent!r} cannot reference itself")


@dataclass(frozen=True)
class SchemaMetadata:
    """Validated database schema: ordered tables plus an acyclic relationship graph.

    Immutable after construction; all invariants are checked eagerly so any
    instance in circulation is safe to consume.
    """

    tables: dict[str, tuple[ColumnSpec, ...]]
    relationships: tuple[Relationship, ...]

    def __post_init__(self) -> None:
        _validate(self)

    def columns(self, table: str) -> tuple[ColumnSpec, ...]:
        try:
            return self.tables[table]
        except KeyError:
            raise SchemaError(f"unknown table {table!r}") from None

    def primary_key(self, table: str) -> str:
        for col in self.columns(table):
            if col.kind == "primary_key":
                return col.name
        raise SchemaError(f"table {table!r} has no primary key")  # unreachable post-validation

    def column_names(self, table: str) -> list[str]:
        return [c.name for c in self.columns(table)]


def _validate(schema: SchemaMetadata) -> None:
    if not schema.tables:
        raise SchemaError("schema defines no tables")
    for table, cols in schema.tables.items():
        names = [c.name for c in cols]
        if len(set(names)) != len(names):
            dup = next(n for n in names if names.count(n) > 1)
            raise SchemaError(f"table {table!r}: duplicate column {dup!r}")
        pks = [c for c in cols if c.kind == "primary_key"]
        if len(pks) != 1:
            raise SchemaError(f"table {table!r} must have exactly one primary key, found {len(pks)}")
        for col in cols:
            if col.kind == "foreign_key" and col.referenced_table not in schema.tables:
                raise SchemaError(
                    f"table {table!r} column {col.name!r} references missing table "
                    f"{col.referenced_table!r}"
                )

    seen: set[tuple[str, str, str]] = set()
    fk_use: dict[tuple[str, str], int] = {}
    for rel in schema.relationships:
        for endpoint in (rel.parent, rel.child):
            if endpoint not in schema.tables:
                raise SchemaError(f"relationship references missing table {endpoint!r}")
        key = (rel.parent, rel.child, rel.foreign_key_column)
        if key in seen:
            raise SchemaError(f"duplicate relationship {rel.parent}->{rel.child} via {rel.foreign_key_column!r}")
        seen.add(key)
        child_cols = {c.name: c for c in schema.tables[rel.child]}
        fk = child_cols.get(rel.foreign_key_column)
        if fk is None or fk.kind != "foreign_key":
            raise SchemaError(
                f"table {rel.child!r} has no foreign-key column {rel.foreign_key_column!r}"
            )
        if fk.referenced_table != rel.parent:
            raise SchemaError(
                f"column {rel.child}.{rel.foreign_key_column} references "
                f"{fk.referenced_table!r}, not relationship parent {rel.parent!r}"
            )
        fk_use[(rel.child, rel.foreign_key_column)] = fk_use.get((rel.child, rel.foreign_key_column), 0) + 1

    for table, cols in schema.tables.items():
        for col in cols:
            if col.kind != "foreign_key":
                continue
            uses = fk_use.get((table, col.name), 0)
            if uses != 1:
                raise SchemaError(
                    f"foreign-key column {table}.{col.name} must appear in exactly one "
                    f"relationship, found {uses}"
                )

    cycle = _find_cycle(schema)
    if cycle is not None:
        raise SchemaError(f"relationship graph has a cycle: {' -> '.join(cycle)}")


def _find_cycle(schema: SchemaMetadata) -> list[str] | None:
    """DFS back-edge search; returns the offending node sequence, or None."""
    children: dict[str, list[str]] = {t: [] for t in schema.tables}
    for rel in schema.relationships:
        children[rel.parent].append(rel.child)

    WHITE, GRAY, BLACK = 0, 1, 2
    color = {t: WHITE for t in schema.tables}
    stack: list[str] = []

    def visit(node: str) -> list[str] | None:
        color[node] = GRAY
        stack.append(node)
        for nxt in children[node]:
            if color[nxt] == GRAY:
                return stack[stack.index(nxt):]
            if color[nxt] == WHITE:
                found = visit(nxt)
                if found is not None:
                    return found
        stack.pop()
        color[node] = BLACK
        return None

    for start in schema.tables:
        if color[start] == WHITE:
            found = visit(start)
            if found is not None:
                return found
    return None


def parse_metadata(document: str) -> SchemaMetadata:
    """Parse and validate a JSON metadata document."""
    try:
        raw = json.loads(document)
    except json.JSONDecodeError as exc:
        raise MetadataParseError(
            f"malformed metadata document: {exc.msg} (line {exc.lineno} column {exc.colno})"
        ) from exc

    if not isinstance(raw, dict):
        raise MetadataParseError("metadata document must be a JSON object")
    extraneous = set(raw) - {"tables", "relationships"}
    if extraneous:
        raise MetadataParseError(f"unexpected top-level keys: {sorted(extraneous)}")
    tables_raw = raw.get("tables")
    rels_raw = raw.get("relationships", [])
    if not isinstance(tables_raw, dict):
        raise MetadataParseError("metadata needs a 'tables' mapping")
    if not isinstance(rels_raw, list):
        raise MetadataParseError("'relationships' must be a list")

    tables: dict[str, tuple[ColumnSpec, ...]] = {}
    for name, spec in tables_raw.items():
        if not isinstance(spec, dict) or not isinstance(spec.get("columns"), list):
            raise MetadataParseError(f"table {name!r} needs a 'columns' list")
        cols = []
        for entry in spec["columns"]:
            if not isinstance(entry, dict) or "name" not in entry or "kind" not in entry:
                raise MetadataParseError(f"table {name!r}: each column needs 'name' and 'kind'")
            cols.append(ColumnSpec(entry["name"], entry["kind"], entry.get("ref")))
        tables[name] = tuple(cols)

    relationships = []
    for entry in rels_raw:
        missing = {"parent", "child", "kind", "foreign_key"} - set(entry)
        if missing:
            raise MetadataParseError(f"relationship entry missing keys: {sorted(missing)}")
        relationships.append(
            Relationship(entry["parent"], entry["child"], entry["kind"], entry["foreign_key"])
        )

    return SchemaMetadata(tables=tables, relationships=tuple(relationships))


def serialize_metadata(schema: SchemaMetadata) -> str:
    """Inverse of parse_metadata; parse(serialize(s)) == s."""
    doc = {
        "tables": {
            name: {
                "columns": [
                    {"name": c.name, "kind": c.kind}
                    | ({"ref": c.referenced_table} if c.referenced_table else {})
                    for c in cols
                ]
            }
            for name, cols in schema.tables.items()
        },
        "relationships": [
            {"parent": r.parent, "child": r.child, "kind": r.kind, "foreign_key": r.foreign_key_column}
            for r in schema.relationships
        ],
    }
    return json.dumps(doc, indent=2) + "\n"


def validate_acyclic(schema: SchemaMetadata) -> None:
    """Require an acyclic relationship graph with at least one relationship.

    Acyclicity is already guaranteed for any constructed SchemaMetadata; this
    is the entry gate for training/sampling, which additionally refuse
    schemas without relations.
    """
    cycle = _find_cycle(schema)
    if cycle is not None:
        raise SchemaError(f"relationship graph has a cycle: {' -> '.join(cycle)}")
    if not schema.relationships:
        raise SchemaError("at least one relation required")


def topological_order(schema: SchemaMetadata) -> list[str]:
    """Table order with every parent before all of its children.

    Kahn's algorithm with a lexicographically sorted frontier, so the result
    is deterministic for a given schema.
    """
    indegree = {t: 0 for t in schema.tables}
    children: dict[str, set[str]] = {t: set() for t in schema.tables}
    for rel in schema.relationships:
        if rel.child not in children[rel.parent]:
            children[rel.parent].add(rel.child)
            indegree[rel.child] += 1

    frontier = sorted(t for t, d in indegree.items() if d == 0)
    order: list[str] = []
    while frontier:
        node = frontier.pop(0)
        order.append(node)
        for nxt in sorted(children[node]):
            indegree[nxt] -= 1
            if indegree[nxt] == 0:
                frontier.append(nxt)
        frontier.sort()
    if len(order) != len(schema.tables):
        cycle = _find_cycle(schema)
        raise SchemaError(f"relationship graph has a cycle: {' -> '.join(cycle or [])}")
    return order


def parents(schema: SchemaMetadata, table: str) -> list[Relationship]:
    """All relationships in which `table` is the child, lexicographic by
    parent name then foreign-key column; empty for root tables."""
    if table not in schema.tables:
        raise SchemaError(f"unknown table {table!r}")
    found = [r for r in schema.relationships if r.child == table]
    found.sort(key=lambda r: (r.parent, r.foreign_key_column))
    return found
