"""Catalog: registered relations, shared dictionaries, and trie materialization.

A catalog owns one Dictionary per attribute domain (columns that join must
share a domain) and one trie per (relation, key order). The default key
order comes from the schema; alternate orders materialize on demand and are
cached, the trie acting as a materialized view of the relation.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

from .errors import IngestError, UserError
from .sets import DENSITY_THRESHOLD, GROUPBY_KEY_DENSITY
from .trie import (
    Schema,
    ingest,
    load_schema_file,
    matrix_schema,
    read_delimited,
    read_matrix_market,
    rekey,
)

MANIFEST_NAME = "catalog.json"
DATA_DIR_ENV = "WCOJ_DATA_DIR"


@dataclass
class BuildOptions:
    density_threshold: float = DENSITY_THRESHOLD
    groupby_key_density: float = GROUPBY_KEY_DENSITY
    groupby_ann_width: int = 3
    workers: int = 1

    def to_json(self):
        return {
            "density_threshold": self.density_threshold,
            "groupby_key_density": self.groupby_key_density,
            "groupby_ann_width": self.groupby_ann_width,
            "workers": self.workers,
        }

    @classmethod
    def from_json(cls, doc):
        out = cls()
        for k, v in doc.items():
            if hasattr(out, k):
                setattr(out, k, v)
        return out


@dataclass
class RelationEntry:
    schema: Schema
    source: str
    delimiter: str = ","
    tries: dict = field(default_factory=dict)  # key-order tuple -> Trie


class Catalog:
    def __init__(self, options=None):
        self.relations = {}
        self.dictionaries = {}
        self.options = options or BuildOptions()

    # -- registration and loading -------------------------------------------

    def register(self, schema, source, delimiter=","):
        self.relations[schema.relation] = RelationEntry(schema, source, delimiter)
        return self.relations[schema.relation]

    def schema(self, relation):
        entry = self.relations.get(relation)
        return entry.schema if entry else None

    def entry(self, relation):
        entry = self.relations.get(relation)
        if entry is None:
            raise UserError(f"unknown relation {relation!r}")
        return entry

    def _load_columns(self, entry):
        if entry.source.endswith(".mtx"):
            return read_matrix_market(entry.source), None
        return read_delimited(entry.source, entry.schema, entry.delimiter)

    def build(self, relation):
        """Ingest the relation's source into its default-order trie."""
        entry = self.entry(relation)
        key = tuple(entry.schema.key_order)
        if key not in entry.tries:
            loaded = self._load_columns(entry)
            columns, row_numbers = loaded if isinstance(loaded, tuple) else (loaded, None)
            entry.tries[key] = ingest(
                entry.schema,
                columns,
                self.dictionaries,
                key_order=entry.schema.key_order,
                threshold=self.options.density_threshold,
                row_numbers=row_numbers,
            )
        return entry.tries[key]

    def trie(self, relation, key_order=None):
        """Trie for the relation under the given key order (built on demand)."""
        entry = self.entry(relation)
        base = self.build(relation)
        if key_order is None or tuple(key_order) == tuple(entry.schema.key_order):
            return base
        key = tuple(key_order)
        if key not in entry.tries:
            entry.tries[key] = rekey(base, list(key_order), self.options.density_threshold)
        return entry.tries[key]

    def dictionary(self, domain):
        d = self.dictionaries.get(domain)
        if d is None:
            raise UserError(f"no dictionary for domain {domain!r}")
        return d

    def raw_rows(self, relation):
        """Source rows as dicts of raw values (for the reference oracle)."""
        entry = self.entry(relation)
        loaded = self._load_columns(entry)
        columns = loaded[0] if isinstance(loaded, tuple) else loaded
        names = [c.name for c in entry.schema.columns]
        cols = [columns[nm] for nm in names]
        return [dict(zip(names, row)) for row in zip(*cols)]


# -- on-disk manifest ----------------------------------------------------------


def manifest_path(data_dir):
    return os.path.join(data_dir, MANIFEST_NAME)


def save_manifest(catalog, data_dir, sources):
    """Persist registration info. sources: relation -> (schema_path, source_path, delimiter)."""
    doc = {
        "options": catalog.options.to_json(),
        "relations": {
            rel: {"schema": schema_path, "source": source_path, "delimiter": delim}
            for rel, (schema_path, source_path, delim) in sources.items()
        },
    }
    os.makedirs(data_dir, exist_ok=True)
    with open(manifest_path(data_dir), "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def load_catalog(data_dir):
    """Rebuild a Catalog from the data directory's manifest."""
    path = manifest_path(data_dir)
    if not os.path.exists(path):
        raise UserError(f"no catalog manifest at {path}; run `wcoj ingest` first")
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    catalog = Catalog(BuildOptions.from_json(doc.get("options", {})))
    sources = {}
    for rel, info in sorted(doc.get("relations", {}).items()):
        schema_path = info["schema"]
        source_path = info["source"]
        if schema_path == "<matrix>":
            schema = matrix_schema(rel)
        else:
            schema = load_schema_file(schema_path)
        if not os.path.exists(source_path):
            raise IngestError(f"relation {rel}: source {source_path} does not exist")
        catalog.register(schema, source_path, info.get("delimiter", ","))
        sources[rel] = (schema_path, source_path, info.get("delimiter", ","))
    catalog._sources = sources
    return catalog
