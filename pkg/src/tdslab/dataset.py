"""Feature schema, bucketization, on-disk span format and batching.

Span file layout (text, one record per line)::

    TDSSPAN 1 crc=<crc32 of the next two lines>
    schema=<hash> span=<t> records=<N>
    columns=<comma separated column names>
    <fixed-width space separated fields> ...

Integers are right-aligned in 12 characters, floats use ``%+.17e`` so a
write/read cycle is exact. Index 0 means "absent" for every discrete feature.
"""
import hashlib
import json
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, SpanIOError

SPAN_MAGIC = "TDSSPAN"
SPAN_VERSION = 1
MANIFEST_MAGIC = "TDSMANIFEST"
SIDES = ("user", "item")


@dataclass(frozen=True)
class StatFeature:
    name: str
    side: str
    n_buckets: int = 10
    lo: float = 0.0
    hi: float = 10.0


@dataclass(frozen=True)
class SeqFeature:
    name: str
    side: str
    vocab_size: int
    max_len: int = 8


@dataclass(frozen=True)
class CateFeature:
    name: str
    side: str
    vocab_size: int


@dataclass(frozen=True)
class FeatureSchema:
    stat: tuple = ()
    seq: tuple = ()
    cate: tuple = ()
    n_tasks: int = 1

    def __post_init__(self):
        names = [f.name for f in self.features()]
        if len(set(names)) != len(names):
            raise ConfigError("feature names must be unique")
        for f in self.features():
            if f.side not in SIDES:
                raise ConfigError(f"{f.name}: side must be user or item")
        for f in self.stat:
            if f.n_buckets < 2:
                raise ConfigError(f"{f.name}: n_buckets must be >= 2")
            if not f.hi > f.lo:
                raise ConfigError(f"{f.name}: empty bucket range")
        for f in self.seq:
            if f.max_len < 1:
                raise ConfigError(f"{f.name}: max_len must be >= 1")
        if self.n_tasks < 1:
            raise ConfigError("n_tasks must be >= 1")

    def features(self):
        return list(self.stat) + list(self.seq) + list(self.cate)

    def side(self, side):
        """Features of one side in canonical order (stat, seq, cate)."""
        return [f for f in self.features() if f.side == side]

    def to_dict(self):
        return {
            "stat": [[f.name, f.side, f.n_buckets, f.lo, f.hi] for f in self.stat],
            "seq": [[f.name, f.side, f.vocab_size, f.max_len] for f in self.seq],
            "cate": [[f.name, f.side, f.vocab_size] for f in self.cate],
            "n_tasks": self.n_tasks,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            stat=tuple(StatFeature(n, s, int(b), float(lo), float(hi)) for n, s, b, lo, hi in d["stat"]),
            seq=tuple(SeqFeature(n, s, int(v), int(m)) for n, s, v, m in d["seq"]),
            cate=tuple(CateFeature(n, s, int(v)) for n, s, v in d["cate"]),
            n_tasks=int(d.get("n_tasks", 1)),
        )

    def hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def columns(self):
        cols = ["user", "item", "span", "group"]
        cols += [f"label{k}" for k in range(self.n_tasks)]
        cols += [f.name for f in self.stat]
        cols += [f.name for f in self.cate]
        for f in self.seq:
            cols += [f"{f.name}[{k}]" for k in range(f.max_len)]
        return cols


def default_schema(n_users, n_items, n_stat=3, n_seq=1, n_cate=3, n_buckets=10, seq_len=8,
                   cate_vocab=8, n_tasks=1):
    """Symmetric schema: the same number of features of each type on both sides.

    User-side sequences hold item ids, item-side sequences hold user ids.
    """
    stat, seq, cate = [], [], []
    for side, other_vocab in (("user", n_items), ("item", n_users)):
        stat += [StatFeature(f"{side}_stat{k}", side, n_buckets, 0.0, 10.0) for k in range(n_stat)]
        seq += [SeqFeature(f"{side}_seq{k}", side, other_vocab, seq_len) for k in range(n_seq)]
        cate += [CateFeature(f"{side}_cate{k}", side, cate_vocab) for k in range(n_cate)]
    return FeatureSchema(tuple(stat), tuple(seq), tuple(cate), n_tasks)


def bucketize(value, feature):
    """Equal-width bucket of ``value`` in [1, n_buckets]; NaN maps to 0."""
    if feature.n_buckets < 2:
        raise ConfigError("n_buckets must be >= 2")
    if value != value:
        return 0
    width = (feature.hi - feature.lo) / feature.n_buckets
    k = math.floor((value - feature.lo) / width) + 1
    return int(min(max(k, 1), feature.n_buckets))


def bucketize_array(values, feature):
    values = np.asarray(values, dtype=np.float64)
    width = (feature.hi - feature.lo) / feature.n_buckets
    nan = np.isnan(values)
    k = np.floor((np.where(nan, feature.lo, values) - feature.lo) / width) + 1
    k = np.clip(k, 1, feature.n_buckets).astype(np.int64)
    k[nan] = 0
    return k


@dataclass
class SpanDataset:
    """Raw records of one span. Stat features hold pre-bucketization floats."""

    span: int
    user: np.ndarray
    item: np.ndarray
    group: np.ndarray
    labels: np.ndarray  # (N, n_tasks) int
    features: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.user)

    @classmethod
    def empty(cls, schema, span=0):
        feats = {f.name: np.zeros(0) for f in schema.stat}
        feats.update({f.name: np.zeros(0, dtype=np.int64) for f in schema.cate})
        feats.update({f.name: np.zeros((0, f.max_len), dtype=np.int64) for f in schema.seq})
        z = np.zeros(0, dtype=np.int64)
        return cls(span, z, z.copy(), z.copy(), np.zeros((0, schema.n_tasks), dtype=np.int64), feats)

    def equals(self, other):
        if self.span != other.span or set(self.features) != set(other.features):
            return False
        pairs = [(self.user, other.user), (self.item, other.item), (self.group, other.group),
                 (self.labels, other.labels)]
        pairs += [(self.features[k], other.features[k]) for k in self.features]
        return all(a.shape == b.shape and np.array_equal(a, b) for a, b in pairs)

    def index_form(self, schema):
        """Discrete view of every feature: stat columns bucketized, others as-is."""
        out = {}
        for f in schema.stat:
            out[f.name] = bucketize_array(self.features[f.name], f)
        for f in schema.cate:
            out[f.name] = np.asarray(self.features[f.name], dtype=np.int64)
        for f in schema.seq:
            out[f.name] = np.asarray(self.features[f.name], dtype=np.int64)
        return out


def _fmt_int(x):
    return "%12d" % x


def _fmt_float(x):
    return "%+.17e" % x


def write_span(path, span, schema):
    path = Path(path)
    n = len(span)
    cols = schema.columns()
    body_head = f"schema={schema.hash()} span={span.span} records={n}\ncolumns={','.join(cols)}\n"
    crc = zlib.crc32(body_head.encode()) & 0xFFFFFFFF
    lines = []
    if n:
        parts = [_int_matrix(np.stack([span.user, span.item, np.full(n, span.span), span.group], axis=1))]
        parts.append(_int_matrix(span.labels))
        if schema.stat:
            parts.append(_float_matrix(np.stack([span.features[f.name] for f in schema.stat], axis=1)))
        if schema.cate:
            parts.append(_int_matrix(np.stack([span.features[f.name] for f in schema.cate], axis=1)))
        for f in schema.seq:
            parts.append(_int_matrix(span.features[f.name]))
        lines = [" ".join(fields) for fields in zip(*parts)]
    text = f"{SPAN_MAGIC} {SPAN_VERSION} crc={crc:08x}\n" + body_head
    text += "".join(line + "\n" for line in lines)
    try:
        path.write_text(text)
    except OSError as exc:
        raise SpanIOError(f"span {span.span}: cannot write {path}: {exc}") from exc


def _int_matrix(a):
    a = np.asarray(a).reshape(len(a), -1)
    return [" ".join(_fmt_int(v) for v in row) for row in a.tolist()]


def _float_matrix(a):
    a = np.asarray(a, dtype=np.float64).reshape(len(a), -1)
    return [" ".join(_fmt_float(v) for v in row) for row in a.tolist()]


def read_span(path, schema):
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise SpanIOError(f"cannot read span file {path}: {exc}") from exc
    try:
        text = raw.decode("ascii")
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: not an ASCII span file") from exc
    lines = text.split("\n")
    if len(lines) < 3:
        raise FormatError(f"{path}: missing header")
    head = lines[0].split(" ")
    if len(head) != 3 or head[0] != SPAN_MAGIC or not head[2].startswith("crc="):
        raise FormatError(f"{path}: bad magic line")
    if head[1] != str(SPAN_VERSION):
        raise FormatError(f"{path}: unsupported span format version {head[1]!r}")
    body_head = lines[1] + "\n" + lines[2] + "\n"
    try:
        crc = int(head[2][4:], 16)
    except ValueError as exc:
        raise FormatError(f"{path}: bad header checksum field") from exc
    if crc != zlib.crc32(body_head.encode()) & 0xFFFFFFFF:
        raise FormatError(f"{path}: header checksum mismatch")
    meta = dict(kv.split("=", 1) for kv in lines[1].split(" "))
    if meta.get("schema") != schema.hash():
        raise FormatError(f"{path}: schema hash {meta.get('schema')} does not match {schema.hash()}")
    cols = lines[2][len("columns="):].split(",")
    if cols != schema.columns():
        raise FormatError(f"{path}: column order does not match schema")
    span_id = int(meta["span"])
    n = int(meta["records"])
    rows = lines[3:3 + n]
    if len(rows) < n or (rows and rows[-1] == "" and n):
        have = sum(1 for r in rows if r)
        raise SpanIOError(f"{path}: truncated, record {have} of {n} missing")
    if n == 0:
        return SpanDataset.empty(schema, span_id)
    n_tasks = schema.n_tasks
    n_int_lead = 4 + n_tasks
    n_stat = len(schema.stat)
    n_cols = len(cols)
    ints, floats = [], []
    for k, row in enumerate(rows):
        fields = row.split()
        if len(fields) != n_cols:
            raise SpanIOError(f"{path}: record {k} has {len(fields)} fields, expected {n_cols}")
        try:
            floats.append([float(x) for x in fields[n_int_lead:n_int_lead + n_stat]])
            ints.append([int(x) for x in fields[:n_int_lead] + fields[n_int_lead + n_stat:]])
        except ValueError as exc:
            raise SpanIOError(f"{path}: record {k} is malformed") from exc
    ints = np.array(ints, dtype=np.int64)
    floats = np.array(floats, dtype=np.float64).reshape(n, n_stat)
    feats = {f.name: floats[:, k].copy() for k, f in enumerate(schema.stat)}
    pos = n_int_lead
    for f in schema.cate:
        feats[f.name] = ints[:, pos].copy()
        pos += 1
    for f in schema.seq:
        feats[f.name] = ints[:, pos:pos + f.max_len].copy()
        pos += f.max_len
    if np.any(ints[:, 2] != span_id):
        raise FormatError(f"{path}: record span ids disagree with header")
    return SpanDataset(span_id, ints[:, 0].copy(), ints[:, 1].copy(), ints[:, 3].copy(),
                       ints[:, 4:4 + n_tasks].copy(), feats)


def span_roundtrip(span, schema, path):
    write_span(path, span, schema)
    return read_span(path, schema)


@dataclass
class Manifest:
    schema: FeatureSchema
    span_files: list
    seed: int
    config: dict = field(default_factory=dict)
    root: Path = Path(".")

    @property
    def n_spans(self):
        return len(self.span_files)

    def span_path(self, t):
        if not 0 <= t < self.n_spans:
            raise SpanIOError(f"span {t} not in manifest ({self.n_spans} spans)")
        return self.root / self.span_files[t]

    def load_span(self, t):
        path = self.span_path(t)
        if not path.exists():
            raise SpanIOError(f"manifest {self.root}: span {t} file {path.name} is missing")
        return read_span(path, self.schema)


def write_manifest(path, manifest):
    lines = [f"format={MANIFEST_MAGIC}", "version=1", f"schema_hash={manifest.schema.hash()}",
             f"schema={json.dumps(manifest.schema.to_dict(), sort_keys=True, separators=(',', ':'))}",
             f"n_spans={manifest.n_spans}", f"seed={manifest.seed}"]
    lines += [f"span_{t}={name}" for t, name in enumerate(manifest.span_files)]
    lines += [f"config.{k}={v}" for k, v in sorted(manifest.config.items())]
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path):
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.txt"
    try:
        text = path.read_text()
    except OSError as exc:
        raise SpanIOError(f"cannot read manifest {path}: {exc}") from exc
    kv = {}
    for line in text.splitlines():
        if line.strip():
            k, _, v = line.partition("=")
            kv[k] = v
    if kv.get("format") != MANIFEST_MAGIC:
        raise FormatError(f"{path}: not a manifest")
    schema = FeatureSchema.from_dict(json.loads(kv["schema"]))
    if schema.hash() != kv.get("schema_hash"):
        raise FormatError(f"{path}: schema hash mismatch")
    n = int(kv["n_spans"])
    files = [kv[f"span_{t}"] for t in range(n)]
    config = {k[len("config."):]: v for k, v in kv.items() if k.startswith("config.")}
    return Manifest(schema, files, int(kv["seed"]), config, path.parent)


@dataclass
class SampleBatch:
    """Index-form mini-batch. ``drop`` holds categorical embedding-dropout masks."""

    features: dict
    labels: np.ndarray
    group: np.ndarray
    span: np.ndarray
    rows: np.ndarray  # record indices within the span
    drop: dict = field(default_factory=dict)
    index: int = 0

    def __len__(self):
        return len(self.labels)

    def replace_features(self, features, drop):
        return SampleBatch(features, self.labels, self.group, self.span, self.rows, drop, self.index)


def take_batch(span, indexed, rows, index=0):
    rows = np.asarray(rows, dtype=np.int64)
    return SampleBatch(
        features={k: v[rows] for k, v in indexed.items()},
        labels=span.labels[rows],
        group=span.group[rows],
        span=np.full(len(rows), span.span, dtype=np.int64),
        rows=rows,
        index=index,
    )


def batch_order(group, batch_size, shuffle_seed, listwise=False):
    """Row-index batches: a seeded permutation of sessions, then packing.

    Without ``listwise`` the shuffled record stream is cut every ``batch_size``
    records. With it, whole sessions are packed greedily so none straddles a
    batch boundary; a session larger than ``batch_size`` forms its own batch.
    """
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    group = np.asarray(group)
    n = len(group)
    if n == 0:
        return []
    sessions, inverse = np.unique(group, return_inverse=True)
    members = [[] for _ in sessions]
    for r, s in enumerate(inverse.tolist()):
        members[s].append(r)
    rng = np.random.default_rng(shuffle_seed)
    perm = rng.permutation(len(sessions))
    if not listwise:
        stream = np.fromiter((r for s in perm for r in members[s]), dtype=np.int64, count=n)
        return [stream[a:a + batch_size] for a in range(0, n, batch_size)]
    batches, current = [], []
    for s in perm:
        rows = members[s]
        if current and len(current) + len(rows) > batch_size:
            batches.append(np.array(current, dtype=np.int64))
            current = []
        current.extend(rows)
    if current:
        batches.append(np.array(current, dtype=np.int64))
    return batches


def batch_iter(span, schema, batch_size, shuffle_seed, listwise=False):
    indexed = span.index_form(schema)
    for k, rows in enumerate(batch_order(span.group, batch_size, shuffle_seed, listwise)):
        yield take_batch(span, indexed, rows, index=k)


class MemoryManifest:
    """Manifest-like view over spans already in memory."""

    def __init__(self, schema, spans):
        self.schema = schema
        self.spans = list(spans)

    @property
    def n_spans(self):
        return len(self.spans)

    def load_span(self, t):
        if not 0 <= t < self.n_spans:
            raise SpanIOError(f"span {t} not in manifest ({self.n_spans} spans)")
        return self.spans[t]
