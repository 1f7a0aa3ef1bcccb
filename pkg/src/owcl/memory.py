"""Replay buffer holding exemplars, their recorded logits, and energy statistics."""

import hashlib
import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import kernels
from .datagen import MultimodalSample, SampleBatch, stack
from .errors import InputError, StateError

log = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-6


class Policy(str, Enum):
    RANDOM_BALANCED = "random_balanced"
    RESERVOIR = "reservoir"
    HERDING = "herding"


@dataclass(frozen=True)
class Exemplar:
    sample: MultimodalSample
    stored_modality_logits: dict
    stored_fused_logits: np.ndarray
    insertion_task: int


@dataclass(frozen=True)
class EnergyStats:
    mean: dict
    std: dict
    count: int

    def arrays(self, modalities):
        return (
            np.array([self.mean[m] for m in modalities]),
            np.array([self.std[m] for m in modalities]),
        )


def herding_order(features, k):
    """Greedy herding: indices whose running mean tracks the feature mean.

    Each step picks the candidate minimising the distance between the class
    mean and the mean of the selection so far plus that candidate. Rows are
    L2-normalised first; ties resolve to the lowest index.
    """
    x = np.asarray(features, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    x = x / np.where(norms > 0, norms, 1.0)
    mu = x.mean(axis=0)
    chosen = []
    running = np.zeros_like(mu)
    available = np.ones(len(x), dtype=bool)
    for step in range(min(k, len(x))):
        cand = (running + x) / (step + 1)
        dist = np.linalg.norm(mu - cand, axis=1)
        dist[~available] = np.inf
        i = int(np.argmin(dist))
        chosen.append(i)
        available[i] = False
        running += x[i]
    return chosen


def quotas(classes, capacity):
    """Per-class slots: equal shares, remainder to the earliest classes."""
    n = len(classes)
    base, rem = divmod(capacity, n)
    return {c: base + (1 if i < rem else 0) for i, c in enumerate(classes)}


class ReplayBuffer:
    def __init__(self, modalities, capacity=320, policy=Policy.RANDOM_BALANCED, std_ddof=0):
        if capacity < 0:
            raise InputError(f"capacity must be >= 0, got {capacity}")
        self.modalities = tuple(modalities)
        self.capacity = int(capacity)
        self.policy = Policy(policy)
        self.std_ddof = std_ddof
        self.exemplars = []
        self.stats = None
        self.seen_classes = []
        self.num_seen = 0
        self._arrays = None

    def __len__(self):
        return len(self.exemplars)

    def class_counts(self):
        out = {}
        for e in self.exemplars:
            out[e.sample.label] = out.get(e.sample.label, 0) + 1
        return out

    def insert_task(self, samples, snapshot, rng, task_index=0):
        """Admit exemplars from a finished task and rebalance to capacity.

        New exemplars record the snapshot's modality and fused logits; the
        recorded logits of survivors are never touched.
        """
        if not samples:
            raise InputError("task has no training samples")
        new_classes = []
        for s in samples:
            if s.label not in self.seen_classes and s.label not in new_classes:
                new_classes.append(s.label)
        classes = self.seen_classes + new_classes
        if self.capacity < len(classes):
            log.warning("capacity %d below %d seen classes; some classes get no slots",
                        self.capacity, len(classes))
        if self.policy is Policy.RESERVOIR:
            chosen = self._reservoir(samples, rng)
        else:
            chosen = self._balanced(samples, new_classes, classes, snapshot, rng)
        self.seen_classes = classes
        if chosen:
            self._admit(chosen, snapshot, task_index)
        self._arrays = None
        assert len(self.exemplars) <= self.capacity

    def _balanced(self, samples, new_classes, classes, snapshot, rng):
        quota = quotas(classes, self.capacity)
        kept = []
        per_class = {}
        for e in self.exemplars:
            lst = per_class.setdefault(e.sample.label, [])
            if len(lst) < quota[e.sample.label]:
                lst.append(e)
                kept.append(e)
        self.exemplars = kept
        by_class = {c: [] for c in new_classes}
        for s in samples:
            if s.label in by_class:
                by_class[s.label].append(s)
        chosen = []
        for c in new_classes:
            pool = by_class[c]
            k = min(quota[c], len(pool))
            if k == 0:
                continue
            if self.policy is Policy.HERDING:
                emb = snapshot.forward(stack(pool, self.modalities).features).f_main
                idx = herding_order(emb, k)
            else:
                idx = [int(i) for i in rng.permutation(len(pool))[:k]]
            chosen.extend(pool[i] for i in idx)
        return chosen

    def _reservoir(self, samples, rng):
        # slots: existing exemplar objects or pending new samples
        slots = list(self.exemplars)
        for s in samples:
            if len(slots) < self.capacity:
                slots.append(s)
            else:
                j = int(rng.integers(0, self.num_seen + 1))
                if j < self.capacity:
                    slots[j] = s
            self.num_seen += 1
        self.exemplars = [x for x in slots if isinstance(x, Exemplar)]
        return [x for x in slots if isinstance(x, MultimodalSample)]

    def _admit(self, chosen, snapshot, task_index):
        out = snapshot.forward(stack(chosen, self.modalities).features)
        for i, s in enumerate(chosen):
            self.exemplars.append(
                Exemplar(
                    s,
                    {m: out.z_m[m][i].copy() for m in self.modalities},
                    out.z_main[i].copy(),
                    task_index,
                )
            )

    def refresh_stats(self, snapshot):
        """Per-modality energy mean and std over the buffer under ``snapshot``."""
        if not self.exemplars:
            raise StateError("cannot compute energy statistics on an empty buffer")
        out = snapshot.forward(self.arrays().batch.features)
        mean, std = {}, {}
        for m in self.modalities:
            energy = -kernels.logsumexp_rows(out.z_m[m])
            mean[m] = float(np.mean(energy))
            std[m] = max(float(np.std(energy, ddof=self.std_ddof)), SIGMA_FLOOR)
        self.stats = EnergyStats(mean, std, len(self.exemplars))
        return self.stats

    def sample_indices(self, k, rng):
        n = len(self.exemplars)
        if n == 0:
            return np.zeros(0, dtype=np.int64)
        if k < 1:
            raise InputError(f"replay batch size must be >= 1, got {k}")
        if k > n:
            return rng.integers(0, n, size=k)
        return rng.choice(n, size=k, replace=False)

    def sample_batch(self, k, rng):
        return [self.exemplars[i] for i in self.sample_indices(k, rng)]

    def arrays(self):
        """Stacked features plus zero-padded stored logits and validity masks."""
        if self._arrays is None:
            self._arrays = ReplayArrays.build(self.exemplars, self.modalities)
        return self._arrays

    def logits_digest(self):
        h = hashlib.sha256()
        for e in self.exemplars:
            h.update(str(e.sample.sample_id).encode())
            for m in self.modalities:
                h.update(e.stored_modality_logits[m].tobytes())
            h.update(e.stored_fused_logits.tobytes())
        return h.hexdigest()

    # checkpoint support ------------------------------------------------------

    def to_arrays(self):
        a = self.arrays()
        out = {
            "buffer/capacity": np.array(self.capacity),
            "buffer/policy": np.array(self.policy.value),
            "buffer/seen_classes": np.array(self.seen_classes, dtype=np.int64),
            "buffer/num_seen": np.array(self.num_seen),
            "buffer/labels": a.batch.labels,
            "buffer/ids": a.batch.ids,
            "buffer/tasks": np.array([e.insertion_task for e in self.exemplars], dtype=np.int64),
            "buffer/lengths": a.lengths,
            "buffer/fused": a.fused,
        }
        for m in self.modalities:
            out[f"buffer/x/{m}"] = np.stack([e.sample.features[m] for e in self.exemplars]) \
                if self.exemplars else np.zeros((0, 0), dtype=np.float32)
            out[f"buffer/z/{m}"] = a.stored[m]
        if self.stats is not None:
            out["buffer/stats"] = np.array(
                [[self.stats.mean[m], self.stats.std[m]] for m in self.modalities]
            )
            out["buffer/stats_count"] = np.array(self.stats.count)
        return out

    @classmethod
    def from_arrays(cls, arrays, modalities, std_ddof=0):
        buf = cls(modalities, int(arrays["buffer/capacity"]), str(arrays["buffer/policy"]), std_ddof)
        buf.seen_classes = [int(c) for c in arrays["buffer/seen_classes"]]
        buf.num_seen = int(arrays["buffer/num_seen"])
        lengths = arrays["buffer/lengths"]
        for i, (lab, sid, task) in enumerate(zip(arrays["buffer/labels"], arrays["buffer/ids"],
                                                 arrays["buffer/tasks"])):
            n = int(lengths[i])
            feats = {m: arrays[f"buffer/x/{m}"][i].copy() for m in modalities}
            sample = MultimodalSample(feats, int(lab), int(sid), "train")
            buf.exemplars.append(Exemplar(
                sample,
                {m: arrays[f"buffer/z/{m}"][i, :n].copy() for m in modalities},
                arrays["buffer/fused"][i, :n].copy(),
                int(task),
            ))
        if "buffer/stats" in arrays:
            st = arrays["buffer/stats"]
            buf.stats = EnergyStats(
                {m: float(st[j, 0]) for j, m in enumerate(modalities)},
                {m: float(st[j, 1]) for j, m in enumerate(modalities)},
                int(arrays["buffer/stats_count"]),
            )
        return buf


@dataclass(frozen=True)
class ReplayArrays:
    batch: SampleBatch
    stored: dict
    fused: np.ndarray
    lengths: np.ndarray

    @classmethod
    def build(cls, exemplars, modalities):
        batch = stack([e.sample for e in exemplars], modalities)
        lengths = np.array([len(e.stored_fused_logits) for e in exemplars], dtype=np.int64)
        width = int(lengths.max()) if len(lengths) else 0
        stored = {}
        for m in modalities:
            z = np.zeros((len(exemplars), width))
            for i, e in enumerate(exemplars):
                z[i, : lengths[i]] = e.stored_modality_logits[m]
            stored[m] = z
        fused = np.zeros((len(exemplars), width))
        for i, e in enumerate(exemplars):
            fused[i, : lengths[i]] = e.stored_fused_logits
        return cls(batch, stored, fused, lengths)

    def take(self, idx):
        return ReplayArrays(
            self.batch.take(idx),
            {m: z[idx] for m, z in self.stored.items()},
            self.fused[idx],
            self.lengths[idx],
        )
