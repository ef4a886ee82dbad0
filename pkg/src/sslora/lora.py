"""Subspace-constrained LoRA layer.

A layer holds a frozen weight ``W`` (d x d'), one shared adapter and, in
``both`` mode, one adapter per domain. The forward pass is::

    h = W x + P_m B A^T x + P_n B_i A_i^T x

where ``P_m`` projects onto the retained column space of ``W`` and ``P_n``
onto the truncated (left-null) directions. Because the projectors are
symmetric, the gradients w.r.t. ``B`` and ``B_i`` already lie in the
respective subspaces.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ContractError
from .linalg import frozen, gaussian_matrix
from .subspace import SubspaceDecomposition


class Mode(str, enum.Enum):
    SHARED_ONLY = "shared-only"
    BOTH = "both"


class InitScheme(str, enum.Enum):
    GAUSSIAN = "gaussian"
    ZERO_B = "zero-b"


@dataclass
class LoraPair:
    """Low-rank factors with ``delta = b @ a.T``; a is d' x r, b is d x r."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        if self.a.ndim != 2 or self.b.ndim != 2 or self.a.shape[1] != self.b.shape[1]:
            raise ContractError(f"incompatible LoRA factors {self.a.shape}, {self.b.shape}")

    @property
    def rank(self) -> int:
        return self.a.shape[1]

    def delta(self) -> np.ndarray:
        return self.b @ self.a.T

    def copy(self) -> "LoraPair":
        return LoraPair(self.a.copy(), self.b.copy())


@dataclass
class LayerGradients:
    da: np.ndarray
    db: np.ndarray
    dx: np.ndarray
    da_dom: np.ndarray | None = None
    db_dom: np.ndarray | None = None


def init_projected(rng: np.random.Generator, d: int, d_in: int, r: int,
                   decomposition: SubspaceDecomposition, *,
                   num_domains: int = 0,
                   scheme: InitScheme | str = InitScheme.GAUSSIAN,
                   std: float = 0.02,
                   constrained: bool = True,
                   dtype=np.float64) -> tuple[LoraPair, list[LoraPair]]:
    """Draw shared and domain-specific adapters and project their B factors.

    Projecting the columns of ``B A^T`` is the same as projecting ``B``, so the
    rank-r factorisation is preserved. Draw order is shared A, shared B, then
    (A_i, B_i) per domain, so the shared adapter does not depend on how many
    domain adapters follow.

    Raises:
        ContractError: ``r`` exceeds ``min(d, d_in)``.
        ConfigurationError: domain adapters requested but ``s == 0``.
    """
    scheme = InitScheme(scheme)
    if not 1 <= r <= min(d, d_in):
        raise ContractError(f"rank {r} must lie in [1, min({d}, {d_in})]")
    if constrained and num_domains > 0 and decomposition.s == 0:
        raise ConfigurationError("left null space empty; lower threshold")

    def draw() -> LoraPair:
        a = gaussian_matrix(rng, d_in, r, std)
        if scheme is InitScheme.GAUSSIAN:
            b = gaussian_matrix(rng, d, r, std)
        else:
            b = np.zeros((d, r))
        return LoraPair(a, b)

    shared = draw()
    specific = [draw() for _ in range(num_domains)]
    if constrained:
        shared.b = decomposition.p_m @ shared.b
        for pair in specific:
            pair.b = decomposition.p_n @ pair.b
    shared = LoraPair(shared.a.astype(dtype), shared.b.astype(dtype))
    specific = [LoraPair(p.a.astype(dtype), p.b.astype(dtype)) for p in specific]
    return shared, specific


@dataclass
class ConstrainedLinearLayer:
    """Frozen linear map with shared and optional per-domain LoRA adapters.

    With ``constrained=False`` both projectors are the identity, giving the
    plain shared + domain-specific LoRA baseline.
    """

    w: np.ndarray
    decomposition: SubspaceDecomposition
    shared: LoraPair
    specific: list[LoraPair] = field(default_factory=list)
    mode: Mode = Mode.SHARED_ONLY
    constrained: bool = True

    def __post_init__(self):
        self.mode = Mode(self.mode)
        self.w = frozen(self.w)
        d, d_in = self.w.shape
        if self.mode is Mode.SHARED_ONLY and self.specific:
            raise ContractError("shared-only layer cannot hold domain adapters")
        if self.mode is Mode.BOTH and not self.specific:
            raise ContractError("both-mode layer needs at least one domain adapter")
        for pair in [self.shared, *self.specific]:
            if pair.a.shape[0] != d_in or pair.b.shape[0] != d:
                raise ContractError("adapter shapes do not match the base weight")
            if pair.rank > min(d, d_in):
                raise ContractError("adapter rank exceeds min(d, d')")
        if self.constrained:
            self.p_m = self.decomposition.p_m.astype(self.w.dtype)
            self.p_n = self.decomposition.p_n.astype(self.w.dtype)
        else:
            self.p_m = np.eye(d, dtype=self.w.dtype)
            self.p_n = np.eye(d, dtype=self.w.dtype)
        self.p_m.setflags(write=False)
        self.p_n.setflags(write=False)

    @property
    def num_domains(self) -> int:
        return len(self.specific)

    @property
    def shape(self) -> tuple[int, int]:
        return self.w.shape

    def _domain_pair(self, domain: int | None) -> LoraPair | None:
        if self.mode is Mode.SHARED_ONLY:
            if domain is not None:
                raise ContractError("shared-only layer takes no domain index")
            return None
        if domain is None:
            raise ContractError("both-mode layer requires a domain index")
        if not 0 <= domain < self.num_domains:
            raise ContractError(f"domain {domain} out of range [0, {self.num_domains})")
        return self.specific[domain]

    def reproject(self) -> None:
        """Snap every B factor back into its subspace (B <- P B)."""
        self.shared.b[...] = self.p_m @ self.shared.b
        for pair in self.specific:
            pair.b[...] = self.p_n @ pair.b


def forward(layer: ConstrainedLinearLayer, x: np.ndarray,
            domain: int | None = None) -> np.ndarray:
    """Apply the layer to a column batch ``x`` (d' x batch).

    Adapters are applied factor-wise (``A^T x`` first) so that no d x d'
    adapter product is formed.
    """
    pair = layer._domain_pair(domain)
    if x.ndim != 2 or x.shape[0] != layer.w.shape[1]:
        raise ContractError(f"input shape {x.shape} incompatible with W {layer.w.shape}")
    h = layer.w @ x
    h += layer.p_m @ (layer.shared.b @ (layer.shared.a.T @ x))
    if pair is not None:
        h += layer.p_n @ (pair.b @ (pair.a.T @ x))
    return h


def backward(layer: ConstrainedLinearLayer, x: np.ndarray, domain: int | None,
             upstream: np.ndarray) -> LayerGradients:
    """Gradients of a scalar loss given ``upstream = dL/dh`` (d x batch)."""
    pair = layer._domain_pair(domain)
    d, d_in = layer.w.shape
    if x.ndim != 2 or x.shape[0] != d_in:
        raise ContractError(f"input shape {x.shape} incompatible with W {layer.w.shape}")
    if upstream.shape != (d, x.shape[1]):
        raise ContractError(f"upstream shape {upstream.shape} != {(d, x.shape[1])}")

    def adapter_grads(p: np.ndarray, lora: LoraPair):
        g_proj = p.T @ upstream                      # d x batch
        u = lora.a.T @ x                             # r x batch
        db = g_proj @ u.T                            # d x r
        gb = lora.b.T @ g_proj                       # r x batch
        da = x @ gb.T                                # d' x r
        return da, db, lora.a @ gb

    da, db, dx_shared = adapter_grads(layer.p_m, layer.shared)
    dx = layer.w.T @ upstream + dx_shared
    grads = LayerGradients(da=da, db=db, dx=dx)
    if pair is not None:
        grads.da_dom, grads.db_dom, dx_dom = adapter_grads(layer.p_n, pair)
        grads.dx = grads.dx + dx_dom
    return grads


def merged_weight(layer: ConstrainedLinearLayer, domain: int | None = None,
                  projected: bool = True) -> np.ndarray:
    """``W`` plus the layer's adapters for ``domain`` as one d x d' matrix.

    Works for either mode; ``projected=False`` gives the raw
    ``W + B A^T + B_i A_i^T`` sum.
    """
    pair = layer._domain_pair(domain)
    pm = layer.p_m if projected else np.eye(layer.w.shape[0], dtype=layer.w.dtype)
    pn = layer.p_n if projected else pm
    merged = layer.w + pm @ layer.shared.delta()
    if pair is not None:
        merged = merged + pn @ pair.delta()
    return merged


def merge(layer: ConstrainedLinearLayer, domain: int, projected: bool = True) -> np.ndarray:
    """Inference weight ``W + P_m B A^T + P_n B_i A_i^T`` for one domain.

    Raises:
        ContractError: the layer is shared-only.
    """
    if layer.mode is not Mode.BOTH:
        raise ContractError("merge requires a layer with domain-specific adapters")
    return merged_weight(layer, domain, projected=projected)
