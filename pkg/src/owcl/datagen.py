"""Synthetic multimodal class-incremental benchmarks.

Each class gets one Gaussian cluster per modality. A modality with
informativeness below 1 puts classes into shared groups: classes in the same
group have the same mean in that modality, so only the other modalities can
tell them apart. Features are stored as float32 so the text format
round-trips exactly.
"""

from dataclasses import dataclass
from functools import cached_property
from itertools import combinations

import numpy as np

from .errors import InputError, ParseError, SpecError, VersionError
from .numcore import make_rng

FORMAT_MAGIC = "OWCLDATA"
FORMAT_VERSION = "v1"


def modality_ids(k):
    return tuple(f"m{i}" for i in range(k))


@dataclass(frozen=True)
class MultimodalSample:
    features: dict
    label: int
    sample_id: int
    split: str = "train"

    def __eq__(self, other):
        if not isinstance(other, MultimodalSample):
            return NotImplemented
        return (
            self.label == other.label
            and self.sample_id == other.sample_id
            and self.split == other.split
            and self.features.keys() == other.features.keys()
            and all(np.array_equal(self.features[m], other.features[m]) for m in self.features)
        )

    __hash__ = None


@dataclass(frozen=True)
class SampleBatch:
    """Column-stacked view of a list of samples."""

    features: dict
    labels: np.ndarray
    ids: np.ndarray

    def __len__(self):
        return len(self.labels)

    def take(self, idx):
        return SampleBatch({m: x[idx] for m, x in self.features.items()}, self.labels[idx], self.ids[idx])


def stack(samples, modalities):
    if not samples:
        return SampleBatch(
            {m: np.zeros((0, 0)) for m in modalities},
            np.zeros(0, dtype=np.int64),
            np.zeros(0, dtype=np.int64),
        )
    feats = {m: np.stack([s.features[m] for s in samples]).astype(np.float64) for m in modalities}
    labels = np.array([s.label for s in samples], dtype=np.int64)
    ids = np.array([s.sample_id for s in samples], dtype=np.int64)
    return SampleBatch(feats, labels, ids)


def concat_batches(a, b):
    if len(a) == 0:
        return b
    if len(b) == 0:
        return a
    return SampleBatch(
        {m: np.concatenate([a.features[m], b.features[m]]) for m in a.features},
        np.concatenate([a.labels, b.labels]),
        np.concatenate([a.ids, b.ids]),
    )


@dataclass
class Dataset:
    num_classes: int
    dims: tuple
    samples: list

    @property
    def modalities(self):
        return modality_ids(len(self.dims))

    def split(self, name):
        return [s for s in self.samples if s.split == name]

    def __eq__(self, other):
        return (
            isinstance(other, Dataset)
            and self.num_classes == other.num_classes
            and tuple(self.dims) == tuple(other.dims)
            and self.samples == other.samples
        )


@dataclass
class Task:
    index: int
    classes: tuple
    train: list
    test: list
    modalities: tuple = ()

    @cached_property
    def train_batch(self):
        return stack(self.train, self.modalities)

    @cached_property
    def test_batch(self):
        return stack(self.test, self.modalities)

    def __eq__(self, other):
        return (
            isinstance(other, Task)
            and self.index == other.index
            and tuple(self.classes) == tuple(other.classes)
            and self.train == other.train
            and self.test == other.test
        )


@dataclass
class TaskStream:
    num_classes: int
    dims: tuple
    increment: int
    class_order: tuple
    tasks: list

    @property
    def modalities(self):
        return modality_ids(len(self.dims))

    def seen_classes(self, t):
        """Cumulative label set after task ``t`` (0-based)."""
        out = []
        for task in self.tasks[: t + 1]:
            out.extend(task.classes)
        return tuple(out)

    def __eq__(self, other):
        return (
            isinstance(other, TaskStream)
            and self.num_classes == other.num_classes
            and tuple(self.dims) == tuple(other.dims)
            and self.increment == other.increment
            and tuple(self.class_order) == tuple(other.class_order)
            and self.tasks == other.tasks
        )


@dataclass(frozen=True)
class GenSpec:
    num_classes: int = 16
    train_per_class: int = 60
    test_per_class: int = 40
    dims: tuple = (16, 8, 8)
    informativeness: tuple = (1.0, 0.5, 0.5)
    dominance_scale: tuple = (2.0, 1.0, 1.0)
    spread: tuple = (1.0, 1.0, 1.0)
    mean_scale: float = 1.0
    degradation: tuple = (0.0, 0.0, 0.0)
    seed: int = 0

    def __post_init__(self):
        k = len(self.dims)
        problems = []
        if self.num_classes < 2:
            problems.append(f"num_classes must be >= 2, got {self.num_classes}")
        if self.train_per_class < 1 or self.test_per_class < 1:
            problems.append("samples per class must be >= 1")
        if k < 1 or any(int(d) < 1 for d in self.dims):
            problems.append(f"dims must be >= 1, got {self.dims}")
        for name in ("informativeness", "dominance_scale", "spread", "degradation"):
            if len(getattr(self, name)) != k:
                problems.append(f"{name} needs {k} entries, got {len(getattr(self, name))}")
        if any(not 0.0 <= v <= 1.0 for v in self.informativeness):
            problems.append(f"informativeness must lie in [0, 1], got {self.informativeness}")
        if any(v < 0 for v in self.dominance_scale):
            problems.append(f"dominance_scale must be >= 0, got {self.dominance_scale}")
        if any(not 0.0 <= v < 1.0 for v in self.degradation):
            problems.append(f"degradation must lie in [0, 1), got {self.degradation}")
        if any(v < 0 for v in self.spread):
            problems.append(f"spread must be >= 0, got {self.spread}")
        if problems:
            raise SpecError("; ".join(problems))


def separated_fraction(groups):
    """Fraction of class pairs that land in different groups."""
    groups = np.asarray(groups)
    n = len(groups)
    _, sizes = np.unique(groups, return_counts=True)
    return 1.0 - float(np.sum(sizes * (sizes - 1))) / (n * (n - 1))


def _balanced_fraction(n, k):
    sizes = np.full(k, n // k)
    sizes[: n % k] += 1
    return 1.0 - float(np.sum(sizes * (sizes - 1))) / (n * (n - 1))


def group_assignment(spec):
    """Per-modality class -> group maps realising the informativeness targets.

    Partially informative modalities use mixed-radix digits of the class id,
    so their partitions cut across each other and cover complementary pairs.
    """
    n = spec.num_classes
    out = []
    stride = 1
    for inf in spec.informativeness:
        k = min(range(1, n + 1), key=lambda kk: (abs(_balanced_fraction(n, kk) - inf), kk))
        if k == n:
            out.append(np.arange(n))
            continue
        out.append((np.arange(n) // stride) % k)
        stride *= k
    for a, b in combinations(range(n), 2):
        if all(g[a] == g[b] for g in out):
            raise SpecError(
                f"classes {a} and {b} are separated by no modality under "
                f"informativeness {tuple(spec.informativeness)}"
            )
    return out


def class_means(spec):
    """(num_classes, dim) mean matrix per modality, before dominance scaling."""
    rng = make_rng(spec.seed)
    means = []
    for groups, d in zip(group_assignment(spec), spec.dims):
        centres = rng.normal(0.0, spec.mean_scale, size=(int(groups.max()) + 1, d))
        means.append(centres[groups])
    return means, rng


def generate(spec):
    means, rng = class_means(spec)
    samples = []
    sid = 0
    for split, count in (("train", spec.train_per_class), ("test", spec.test_per_class)):
        for c in range(spec.num_classes):
            noise = [rng.normal(size=(count, d)) for d in spec.dims]
            keep = rng.random(size=(count, len(spec.dims))) >= np.asarray(spec.degradation)
            for i in range(count):
                feats = {}
                for m, mod in enumerate(modality_ids(len(spec.dims))):
                    centre = means[m][c] if keep[i, m] else 0.0
                    v = spec.dominance_scale[m] * (centre + spec.spread[m] * noise[m][i])
                    feats[mod] = v.astype(np.float32)
                samples.append(MultimodalSample(feats, c, sid, split))
                sid += 1
    return Dataset(spec.num_classes, tuple(int(d) for d in spec.dims), samples)


def split_tasks(dataset, increment, seed):
    """Shuffle the class order by ``seed`` and cut it into tasks.

    Samples in the stream are relabelled by arrival position, so task ``t``
    owns labels ``t*increment .. (t+1)*increment - 1`` and the network's
    class dimension only ever grows at the end. ``class_order[label]`` gives
    the original class id.
    """
    n = dataset.num_classes
    if increment < 1 or n % increment:
        raise SpecError(f"increment {increment} does not divide {n} classes")
    order = tuple(int(c) for c in make_rng(seed).permutation(n))
    return _stream_from_order(dataset, increment, order)


def _fmt(v):
    return f"{float(v):.9g}"


def _record(s, modalities, label=None):
    label = s.label if label is None else label
    parts = [f"id={s.sample_id} label={label} split={s.split}"]
    for m in modalities:
        parts.append(f"{m}: " + " ".join(_fmt(v) for v in s.features[m]))
    return " | ".join(parts)


def save(obj, path):
    if isinstance(obj, TaskStream):
        samples = [s for t in obj.tasks for s in t.train + t.test]
        samples.sort(key=lambda s: s.sample_id)
    elif isinstance(obj, Dataset):
        samples = obj.samples
    else:
        raise InputError(f"cannot save {type(obj).__name__}")
    mods = modality_ids(len(obj.dims))
    lines = [
        f"{FORMAT_MAGIC} {FORMAT_VERSION}",
        f"classes={obj.num_classes} modalities={len(obj.dims)} "
        f"dims={','.join(str(d) for d in obj.dims)} samples={len(samples)}",
    ]
    if isinstance(obj, TaskStream):
        lines.append(
            f"stream increment={obj.increment} order={','.join(str(c) for c in obj.class_order)}"
        )
    if isinstance(obj, TaskStream):
        lines.extend(_record(s, mods, obj.class_order[s.label]) for s in samples)
    else:
        lines.extend(_record(s, mods) for s in samples)
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def _kv(tokens, lineno):
    out = {}
    for tok in tokens:
        key, sep, val = tok.partition("=")
        if not sep:
            raise ParseError(f"expected key=value, got {tok!r}", lineno)
        out[key] = val
    return out


def _int(val, what, lineno):
    try:
        return int(val)
    except (TypeError, ValueError):
        raise ParseError(f"bad integer for {what}: {val!r}", lineno) from None


def _parse_record(line, lineno, dims, mods, num_classes):
    parts = [p.strip() for p in line.split("|")]
    head = _kv(parts[0].split(), lineno)
    for key in ("id", "label"):
        if key not in head:
            raise ParseError(f"record missing {key}=", lineno)
    label = _int(head["label"], "label", lineno)
    if not 0 <= label < num_classes:
        raise ParseError(f"label {label} outside {num_classes} classes", lineno)
    split = head.get("split", "train")
    if split not in ("train", "test"):
        raise ParseError(f"unknown split {split!r}", lineno)
    feats = {}
    for part in parts[1:]:
        mod, sep, body = part.partition(":")
        mod = mod.strip()
        if not sep:
            raise ParseError(f"malformed modality block {part[:20]!r}", lineno)
        if mod not in mods:
            raise ParseError(f"unknown modality id {mod!r}", lineno)
        if mod in feats:
            raise ParseError(f"modality {mod!r} repeated", lineno)
        try:
            vals = np.array([np.float32(float(v)) for v in body.split()], dtype=np.float32)
        except ValueError:
            raise ParseError(f"bad number in modality {mod!r}", lineno) from None
        want = dims[mods.index(mod)]
        if vals.shape != (want,):
            raise ParseError(f"modality {mod!r} has {vals.size} values, expected {want}", lineno)
        if not np.all(np.isfinite(vals)):
            raise ParseError(f"non-finite value in modality {mod!r}", lineno)
        feats[mod] = vals
    missing = [m for m in mods if m not in feats]
    if missing:
        raise ParseError(f"record missing modalities {missing}", lineno)
    return MultimodalSample(feats, label, _int(head["id"], "id", lineno), split)


def load(path):
    """Read a dataset or task stream written by ``save``.

    Raises ParseError (with a line number) on any malformed or truncated
    content; nothing partial is returned.
    """
    with open(path, encoding="ascii") as fh:
        raw = fh.read()
    lines = raw.split("\n")
    if raw and not raw.endswith("\n"):
        raise ParseError("file does not end with a newline (truncated?)", len(lines))
    lines = lines[:-1] if raw else []
    if not lines:
        raise ParseError("empty file", 1)
    magic = lines[0].split()
    if len(magic) != 2 or magic[0] != FORMAT_MAGIC:
        raise ParseError(f"not an {FORMAT_MAGIC} file", 1)
    if magic[1] != FORMAT_VERSION:
        raise VersionError(f"unsupported format version {magic[1]!r}, expected {FORMAT_VERSION}")
    if len(lines) < 2:
        raise ParseError("missing header line", 2)
    hdr = _kv(lines[1].split(), 2)
    for key in ("classes", "modalities", "dims"):
        if key not in hdr:
            raise ParseError(f"header missing {key}=", 2)
    num_classes = _int(hdr["classes"], "classes", 2)
    k = _int(hdr["modalities"], "modalities", 2)
    dims = tuple(_int(d, "dims", 2) for d in hdr["dims"].split(","))
    if len(dims) != k:
        raise ParseError(f"{len(dims)} dims for {k} modalities", 2)
    mods = modality_ids(k)
    body_start = 2
    stream = None
    if len(lines) > 2 and lines[2].startswith("stream "):
        stream = _kv(lines[2].split()[1:], 3)
        body_start = 3
    samples = [
        _parse_record(line, i + 1, dims, mods, num_classes)
        for i, line in enumerate(lines[body_start:], start=body_start)
    ]
    if "samples" in hdr and _int(hdr["samples"], "samples", 2) != len(samples):
        raise ParseError(
            f"header promises {hdr['samples']} samples, found {len(samples)} (truncated?)",
            len(lines),
        )
    dataset = Dataset(num_classes, dims, samples)
    if stream is None:
        return dataset
    try:
        increment = int(stream["increment"])
        order = tuple(int(c) for c in stream["order"].split(","))
    except (KeyError, ValueError):
        raise ParseError("malformed stream line", 3) from None
    if sorted(order) != list(range(num_classes)) or num_classes % increment:
        raise ParseError("stream class order is not a valid partition", 3)
    return _stream_from_order(dataset, increment, order)


def _stream_from_order(dataset, increment, order):
    n = dataset.num_classes
    position = {c: i for i, c in enumerate(order)}
    by_pos = {i: ([], []) for i in range(n)}
    for s in dataset.samples:
        p = position[s.label]
        by_pos[p][0 if s.split == "train" else 1].append(
            MultimodalSample(s.features, p, s.sample_id, s.split)
        )
    tasks = []
    for t in range(n // increment):
        classes = tuple(range(t * increment, (t + 1) * increment))
        train = [s for c in classes for s in by_pos[c][0]]
        test = [s for c in classes for s in by_pos[c][1]]
        tasks.append(Task(t, classes, train, test, dataset.modalities))
    return TaskStream(n, tuple(dataset.dims), increment, order, tasks)
