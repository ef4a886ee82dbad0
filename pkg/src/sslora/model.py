"""Multi-domain network: frozen MLP body with constrained LoRA layers and
per-domain linear heads."""

from __future__ import annotations

import enum
import hashlib
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import erf

from . import lora
from .errors import ConfigurationError, ContractError, NumericalError
from .linalg import gaussian_matrix, seeded_rng
from .lora import ConstrainedLinearLayer, InitScheme, LoraPair, Mode
from .subspace import decompose

log = logging.getLogger(__name__)

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(z: np.ndarray) -> np.ndarray:
    return 0.5 * z * (1.0 + erf(z / _SQRT2))


def gelu_grad(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + erf(z / _SQRT2)) + z * _INV_SQRT_2PI * np.exp(-0.5 * z * z)


class Structure(str, enum.Enum):
    UPPER_HEAVY = "upper_heavy"
    ALL_FLAT = "all_flat"


@dataclass
class NetworkSpec:
    """Shape and adapter layout of a :class:`MultiDomainNet`.

    A block is two linear layers, each followed by GELU; the first layer maps
    ``input_dim -> hidden_dim`` and all later ones ``hidden_dim -> hidden_dim``.
    """

    input_dim: int
    hidden_dim: int
    num_blocks: int
    num_classes: int
    num_domains: int
    structure: Structure = Structure.UPPER_HEAVY
    rank: int = 8
    threshold: float = 0.95
    activation: str = "gelu"
    constrained: bool = True
    init_scheme: InitScheme = InitScheme.GAUSSIAN
    init_std: float = 0.02
    dtype: str = "float64"

    def __post_init__(self):
        self.structure = Structure(self.structure)
        self.init_scheme = InitScheme(self.init_scheme)
        if self.num_blocks < 1:
            raise ConfigurationError("num_blocks must be >= 1")
        if min(self.input_dim, self.hidden_dim, self.num_classes, self.num_domains) < 1:
            raise ConfigurationError("dimensions must be positive")
        if self.activation != "gelu":
            raise ConfigurationError(f"unsupported activation {self.activation!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigurationError(f"dtype must be float32 or float64, got {self.dtype!r}")

    @property
    def num_layers(self) -> int:
        return 2 * self.num_blocks

    def layer_shape(self, idx: int) -> tuple[int, int]:
        return (self.hidden_dim, self.input_dim if idx == 0 else self.hidden_dim)

    def layer_mode(self, idx: int) -> Mode:
        if self.structure is Structure.ALL_FLAT or idx >= self.num_layers - 2:
            return Mode.BOTH
        return Mode.SHARED_ONLY

    def to_dict(self) -> dict:
        out = asdict(self)
        out["structure"] = self.structure.value
        out["init_scheme"] = self.init_scheme.value
        return out


@dataclass
class Head:
    w: np.ndarray
    b: np.ndarray


@dataclass
class MultiDomainNet:
    spec: NetworkSpec
    layers: list[ConstrainedLinearLayer]
    heads: list[Head]
    fingerprint: str = ""
    _cache: dict | None = field(default=None, repr=False)

    def __post_init__(self):
        if not self.fingerprint:
            self.fingerprint = base_fingerprint([layer.w for layer in self.layers])

    def parameters(self) -> dict[str, np.ndarray]:
        """Trainable arrays keyed by their checkpoint names (live references)."""
        params: dict[str, np.ndarray] = {}
        for idx, layer in enumerate(self.layers):
            params[f"layer{idx}.shared.A"] = layer.shared.a
            params[f"layer{idx}.shared.B"] = layer.shared.b
            for dom, pair in enumerate(layer.specific):
                params[f"layer{idx}.dom{dom}.A"] = pair.a
                params[f"layer{idx}.dom{dom}.B"] = pair.b
        for dom, head in enumerate(self.heads):
            params[f"head{dom}.W"] = head.w
            params[f"head{dom}.b"] = head.b
        return params

    def both_layers(self) -> list[int]:
        return [i for i, layer in enumerate(self.layers) if layer.mode is Mode.BOTH]

    def current_fingerprint(self) -> str:
        return base_fingerprint([layer.w for layer in self.layers])

    def forward(self, x: np.ndarray, domain: int) -> np.ndarray:
        """Logits (C x batch) for a column batch ``x`` of one domain."""
        self._check_domain(domain)
        if x.ndim != 2 or x.shape[0] != self.spec.input_dim:
            raise ContractError(f"input must be {self.spec.input_dim} x batch, got {x.shape}")
        inputs, pre = [], []
        a = x
        for layer in self.layers:
            inputs.append(a)
            z = lora.forward(layer, a, self._layer_domain(layer, domain))
            pre.append(z)
            a = gelu(z)
        head = self.heads[domain]
        self._cache = {"domain": domain, "inputs": inputs, "pre": pre, "features": a}
        return head.w @ a + head.b[:, None]

    def backward(self, dlogits: np.ndarray) -> dict[str, np.ndarray]:
        """Gradients for every parameter touched by the last :meth:`forward`.

        Only the active domain's adapters and head appear; frozen weights get
        no gradient.
        """
        if self._cache is None:
            raise ContractError("backward called before forward")
        cache = self._cache
        domain = cache["domain"]
        head = self.heads[domain]
        grads = {f"head{domain}.W": dlogits @ cache["features"].T,
                 f"head{domain}.b": dlogits.sum(axis=1)}
        g = head.w.T @ dlogits
        for idx in reversed(range(len(self.layers))):
            layer = self.layers[idx]
            g = g * gelu_grad(cache["pre"][idx])
            lg = lora.backward(layer, cache["inputs"][idx],
                               self._layer_domain(layer, domain), g)
            grads[f"layer{idx}.shared.A"] = lg.da
            grads[f"layer{idx}.shared.B"] = lg.db
            if lg.da_dom is not None:
                grads[f"layer{idx}.dom{domain}.A"] = lg.da_dom
                grads[f"layer{idx}.dom{domain}.B"] = lg.db_dom
            g = lg.dx
        return grads

    def merged_forward(self, x: np.ndarray, domain: int, projected: bool = True) -> np.ndarray:
        """Inference path: fold adapters into each weight, then plain matmuls."""
        self._check_domain(domain)
        a = x
        for w in self.merged_weights(domain, projected=projected):
            a = gelu(w @ a)
        head = self.heads[domain]
        return head.w @ a + head.b[:, None]

    def merged_weights(self, domain: int, projected: bool = True) -> list[np.ndarray]:
        self._check_domain(domain)
        return [lora.merged_weight(layer, self._layer_domain(layer, domain), projected)
                for layer in self.layers]

    def reproject(self) -> None:
        if self.spec.constrained:
            for layer in self.layers:
                layer.reproject()

    def _check_domain(self, domain: int) -> None:
        if not 0 <= domain < self.spec.num_domains:
            raise ContractError(f"domain {domain} out of range [0, {self.spec.num_domains})")

    @staticmethod
    def _layer_domain(layer: ConstrainedLinearLayer, domain: int) -> int | None:
        return domain if layer.mode is Mode.BOTH else None


def base_fingerprint(weights) -> str:
    h = hashlib.sha256()
    for w in weights:
        h.update(str(w.shape).encode())
        h.update(str(w.dtype).encode())
        h.update(np.ascontiguousarray(w).tobytes())
    return h.hexdigest()


def _layer_rng(seed: int, idx: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, idx])))


def build(spec: NetworkSpec, base_weights: list[np.ndarray], seed: int) -> MultiDomainNet:
    """Freeze ``base_weights``, decompose each, and attach projected adapters.

    Every layer draws from its own seed stream, so shared adapters are
    identical across structures for the same seed. Heads start at zero.

    Raises:
        ContractError: base weight shapes do not match ``spec``.
        ConfigurationError: a both-mode layer has an empty left null space.
    """
    if len(base_weights) != spec.num_layers:
        raise ContractError(f"expected {spec.num_layers} base weights, got {len(base_weights)}")
    dtype = np.dtype(spec.dtype)
    layers = []
    for idx, w in enumerate(base_weights):
        if w.shape != spec.layer_shape(idx):
            raise ContractError(f"layer {idx}: weight shape {w.shape} != {spec.layer_shape(idx)}")
        mode = spec.layer_mode(idx)
        decomp = decompose(np.asarray(w, dtype=np.float64), spec.threshold)
        if spec.constrained and mode is Mode.BOTH and decomp.s == 0:
            raise ConfigurationError(
                f"layer {idx}: left null space empty at threshold {spec.threshold}; "
                "lower threshold")
        shared, specific = lora.init_projected(
            _layer_rng(seed, idx), w.shape[0], w.shape[1], spec.rank, decomp,
            num_domains=spec.num_domains if mode is Mode.BOTH else 0,
            scheme=spec.init_scheme, std=spec.init_std,
            constrained=spec.constrained, dtype=dtype)
        layers.append(ConstrainedLinearLayer(
            w=np.asarray(w, dtype=dtype), decomposition=decomp, shared=shared,
            specific=specific, mode=mode, constrained=spec.constrained))
    heads = [Head(np.zeros((spec.num_classes, spec.hidden_dim), dtype=dtype),
                  np.zeros(spec.num_classes, dtype=dtype))
             for _ in range(spec.num_domains)]
    return MultiDomainNet(spec=spec, layers=layers, heads=heads)


def trainable_count(spec: NetworkSpec) -> int:
    n = 0
    for idx in range(spec.num_layers):
        d, d_in = spec.layer_shape(idx)
        n_adapters = 1 + (spec.num_domains if spec.layer_mode(idx) is Mode.BOTH else 0)
        n += spec.rank * (d + d_in) * n_adapters
    return n + spec.num_domains * (spec.num_classes * spec.hidden_dim + spec.num_classes)


def net_tensors(net: MultiDomainNet) -> dict[str, np.ndarray]:
    """Base weights plus trainable tensors under their checkpoint names."""
    tensors = {f"layer{idx}.W": layer.w for idx, layer in enumerate(net.layers)}
    tensors.update(net.parameters())
    return tensors


def net_from_tensors(spec: NetworkSpec, tensors: dict[str, np.ndarray]) -> MultiDomainNet:
    """Rebuild a network from :func:`net_tensors` output (decompositions recomputed)."""
    try:
        base = [tensors[f"layer{idx}.W"] for idx in range(spec.num_layers)]
        net = build(spec, base, seed=0)
        for name, arr in net.parameters().items():
            src = tensors[name]
            if src.shape != arr.shape:
                raise ContractError(f"tensor {name}: shape {src.shape} != {arr.shape}")
            arr[...] = src
    except KeyError as exc:
        raise ContractError(f"checkpoint is missing tensor {exc.args[0]}") from exc
    return net


def init_base(spec: NetworkSpec, seed: int) -> list[np.ndarray]:
    rng = seeded_rng(seed)
    return [gaussian_matrix(rng, *spec.layer_shape(idx), std=1.0 / math.sqrt(spec.layer_shape(idx)[1]))
            for idx in range(spec.num_layers)]


def pretrain_base(spec: NetworkSpec, x: np.ndarray, labels: np.ndarray, *,
                  epochs: int, lr: float = 1e-3, batch_size: int = 32,
                  seed: int = 0) -> tuple[list[np.ndarray], float]:
    """Fit a plain, fully trainable MLP with one pooled head; return its body.

    ``x`` holds samples as rows (n x input_dim). Uses Adam without decay.

    Returns:
        ``(weights, train_accuracy)`` where ``weights`` are the layer
        matrices to freeze.

    Raises:
        NumericalError: the loss became non-finite.
    """
    from .losses import cross_entropy
    from .optim import AdamW

    weights = init_base(spec, seed)
    rng = seeded_rng(seed + 1)
    head_w = gaussian_matrix(rng, spec.num_classes, spec.hidden_dim,
                             std=1.0 / math.sqrt(spec.hidden_dim))
    head_b = np.zeros(spec.num_classes)
    params = {f"w{i}": w for i, w in enumerate(weights)}
    params["head.W"] = head_w
    params["head.b"] = head_b
    opt = AdamW(params, weight_decay=0.0)
    labels = np.asarray(labels)
    n = x.shape[0]

    def run(xb):
        acts, pre = [xb], []
        a = xb
        for w in weights:
            z = w @ a
            pre.append(z)
            a = gelu(z)
            acts.append(a)
        return acts, pre, head_w @ a + head_b[:, None]

    step = 0
    for epoch in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            xb = x[idx].T
            acts, pre, logits = run(xb)
            loss, g = cross_entropy(logits, labels[idx])
            if not math.isfinite(loss):
                raise NumericalError(
                    f"pretraining diverged at epoch {epoch}, step {step}: loss={loss}",
                    iterations=step)
            grads = {"head.W": g @ acts[-1].T, "head.b": g.sum(axis=1)}
            g = head_w.T @ g
            for i in reversed(range(len(weights))):
                g = g * gelu_grad(pre[i])
                grads[f"w{i}"] = g @ acts[i].T
                g = weights[i].T @ g
            opt.step(grads, lr)
            step += 1
        log.debug("pretrain epoch %d loss %.4f", epoch, loss)
    logits = run(x.T)[2]
    acc = float(np.mean(np.argmax(logits, axis=0) == labels))
    return weights, acc
