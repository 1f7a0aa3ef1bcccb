"""Encoder / fusion / classifier network with one auxiliary head per modality."""

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, InputError, ShapeError, VersionError
from .numcore import Activation, DenseLayer, glorot_uniform

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ArchConfig:
    hidden: int = 32
    embed: int = 16
    fusion: int = 32


@dataclass
class ForwardOutput:
    f_m: dict
    f_main: np.ndarray
    z_main: np.ndarray
    z_m: dict
    cache: dict


class MultimodalNet:
    def __init__(self, modalities, dims, num_classes, rng=None, arch=ArchConfig(), _empty=False):
        self.modalities = tuple(modalities)
        self.dims = tuple(int(d) for d in dims)
        self.arch = arch
        self.current_classes = int(num_classes)
        if len(self.modalities) != len(self.dims):
            raise ShapeError(f"{len(self.modalities)} modalities but {len(self.dims)} dims")
        if _empty:
            return
        if rng is None:
            raise InputError("an rng is required to initialise weights")
        self.encoders = {
            m: [
                DenseLayer.init(rng, d, arch.hidden, Activation.RELU),
                DenseLayer.init(rng, arch.hidden, arch.embed),
            ]
            for m, d in zip(self.modalities, self.dims)
        }
        self.fusion = DenseLayer.init(rng, arch.embed * len(self.modalities), arch.fusion, Activation.RELU)
        self.classifier = DenseLayer.init(rng, arch.fusion, self.current_classes)
        self.heads = {m: DenseLayer.init(rng, arch.embed, self.current_classes) for m in self.modalities}

    # parameter access ------------------------------------------------------

    def layers(self):
        """Named layers in a fixed order."""
        out = []
        for m in self.modalities:
            for i, layer in enumerate(self.encoders[m]):
                out.append((f"enc.{m}.{i}", layer))
        out.append(("fusion", self.fusion))
        out.append(("cls", self.classifier))
        for m in self.modalities:
            out.append((f"head.{m}", self.heads[m]))
        return out

    def params(self):
        out = {}
        for name, layer in self.layers():
            out[f"{name}.W"] = layer.weights
            out[f"{name}.b"] = layer.bias
        return out

    def zero_grads(self):
        return {k: np.zeros_like(v) for k, v in self.params().items()}

    def copy(self):
        net = MultimodalNet(self.modalities, self.dims, self.current_classes, arch=self.arch, _empty=True)
        net.encoders = {m: [l.copy() for l in ls] for m, ls in self.encoders.items()}
        net.fusion = self.fusion.copy()
        net.classifier = self.classifier.copy()
        net.heads = {m: h.copy() for m, h in self.heads.items()}
        return net

    def fingerprint(self):
        h = hashlib.sha256()
        for name, p in self.params().items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(p).tobytes())
        return h.hexdigest()

    def equals(self, other):
        a, b = self.params(), other.params()
        return a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)

    # computation -----------------------------------------------------------

    def forward(self, features):
        """Batched forward pass; ``features`` maps modality -> (B, d) array."""
        for m, d in zip(self.modalities, self.dims):
            if m not in features:
                raise InputError(f"missing modality {m!r}")
            x = features[m]
            if x.ndim != 2 or x.shape[1] != d:
                raise ShapeError(f"modality {m!r} expects (*, {d}) features, got {x.shape}")
        cache = {}
        f_m, z_m = {}, {}
        for m in self.modalities:
            h, c0 = self.encoders[m][0].forward(features[m])
            f, c1 = self.encoders[m][1].forward(h)
            z, ch = self.heads[m].forward(f)
            f_m[m], z_m[m] = f, z
            cache[m] = (c0, c1, ch)
        joined = np.concatenate([f_m[m] for m in self.modalities], axis=1)
        f_main, cf = self.fusion.forward(joined)
        z_main, cc = self.classifier.forward(f_main)
        cache["fusion"], cache["cls"] = cf, cc
        return ForwardOutput(f_m, f_main, z_main, z_m, cache)

    def forward_sample(self, sample):
        out = self.forward({m: np.asarray(v, dtype=np.float64)[None, :] for m, v in sample.features.items()})
        return ForwardOutput(
            {m: v[0] for m, v in out.f_m.items()},
            out.f_main[0],
            out.z_main[0],
            {m: v[0] for m, v in out.z_m.items()},
            out.cache,
        )

    def backward(self, out, grad_main=None, grad_mod=None):
        """Parameter gradients given upstream gradients on the logits.

        Either gradient may be None (treated as zero). Encoder gradients sum
        the fused-path and head-path contributions.
        """
        grads = {}
        n = out.z_main.shape[0]
        ncls = self.current_classes
        if grad_main is None:
            grad_main = np.zeros((n, ncls))
        if grad_main.shape != out.z_main.shape:
            raise ShapeError(f"main gradient {grad_main.shape} vs logits {out.z_main.shape}")
        grad_mod = grad_mod or {}
        d_f, gw, gb = self.classifier.backward(out.cache["cls"], grad_main)
        grads["cls.W"], grads["cls.b"] = gw, gb
        d_joined, gw, gb = self.fusion.backward(out.cache["fusion"], d_f)
        grads["fusion.W"], grads["fusion.b"] = gw, gb
        e = self.arch.embed
        for i, m in enumerate(self.modalities):
            c0, c1, ch = out.cache[m]
            d_fm = d_joined[:, i * e:(i + 1) * e]
            g = grad_mod.get(m)
            if g is None:
                g = np.zeros((n, ncls))
            if g.shape != out.z_m[m].shape:
                raise ShapeError(f"head {m!r} gradient {g.shape} vs logits {out.z_m[m].shape}")
            d_head_in, gw, gb = self.heads[m].backward(ch, g)
            grads[f"head.{m}.W"], grads[f"head.{m}.b"] = gw, gb
            d_fm = d_fm + d_head_in
            d_h, gw, gb = self.encoders[m][1].backward(c1, d_fm)
            grads[f"enc.{m}.1.W"], grads[f"enc.{m}.1.b"] = gw, gb
            _, gw, gb = self.encoders[m][0].backward(c0, d_h)
            grads[f"enc.{m}.0.W"], grads[f"enc.{m}.0.b"] = gw, gb
        return grads

    def expand_classes(self, new_total, rng):
        """Grow the classifier and every head; existing rows stay bitwise intact."""
        new_total = int(new_total)
        if new_total < self.current_classes:
            raise DomainError(f"cannot shrink from {self.current_classes} to {new_total} classes")
        extra = new_total - self.current_classes
        if extra == 0:
            return
        for layer in [self.classifier] + [self.heads[m] for m in self.modalities]:
            rows = glorot_uniform(rng, new_total, layer.n_in)[:extra]
            layer.weights = np.concatenate([layer.weights, rows], axis=0)
            layer.bias = np.concatenate([layer.bias, np.zeros(extra)])
        self.current_classes = new_total

    # persistence -----------------------------------------------------------

    def descriptor(self):
        return {
            "version": CHECKPOINT_VERSION,
            "modalities": list(self.modalities),
            "dims": list(self.dims),
            "classes": self.current_classes,
            "arch": {"hidden": self.arch.hidden, "embed": self.arch.embed, "fusion": self.arch.fusion},
            "activations": {name: layer.activation.value for name, layer in self.layers()},
        }


def save_checkpoint(net, path, extra_arrays=None):
    """Write every parameter plus the architecture descriptor to an ``.npz`` file."""
    arrays = {f"param/{k}": v for k, v in net.params().items()}
    for k, v in (extra_arrays or {}).items():
        arrays[f"extra/{k}"] = v
    arrays["descriptor"] = np.array(json.dumps(net.descriptor(), sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    """Returns ``(net, extra_arrays)``."""
    with np.load(path, allow_pickle=False) as data:
        desc = json.loads(str(data["descriptor"]))
        if desc.get("version") != CHECKPOINT_VERSION:
            raise VersionError(f"checkpoint version {desc.get('version')} != {CHECKPOINT_VERSION}")
        arch = ArchConfig(**desc["arch"])
        net = MultimodalNet(desc["modalities"], desc["dims"], desc["classes"], arch=arch, _empty=True)
        acts = desc["activations"]

        def layer(name):
            return DenseLayer(data[f"param/{name}.W"], data[f"param/{name}.b"], acts[name])

        net.encoders = {m: [layer(f"enc.{m}.0"), layer(f"enc.{m}.1")] for m in net.modalities}
        net.fusion = layer("fusion")
        net.classifier = layer("cls")
        net.heads = {m: layer(f"head.{m}") for m in net.modalities}
        extra = {k[len("extra/"):]: data[k] for k in data.files if k.startswith("extra/")}
    return net, extra
