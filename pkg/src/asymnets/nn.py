"""Standard, W-Asymmetric and sigma-Asymmetric MLPs.

Randomness is split into two independent streams: ``asym_seed`` drives every
mask and fixed matrix, ``init_seed`` drives the trainable initialization. Two
models that share ``asym_seed`` therefore share their whole asymmetry payload.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor

ASYM_MODES = ("standard", "w_asym", "sigma_asym")
NONLINEARITIES = ("relu", "figlu")

# Depth-4 MNIST MLP asymmetry settings (per linear layer)
TABLE4_WIDTHS = (784, 512, 512, 512, 10)
TABLE4_N_FIX = (64, 64, 64, 256)
TABLE4_KAPPA = (1.0, 1.0, 0.5, 0.25)


class ConfigError(ValueError):
    pass


class InfeasibleMaskError(ValueError):
    pass


# ---------------------------------------------------------------- config

@dataclass
class ModelConfig:
    widths: list[int]
    asym_mode: str = "standard"
    nonlinearity: str = "relu"
    layernorm: bool = True
    bias: bool = True
    n_fix: list[int] = field(default_factory=list)
    kappa: list[float] = field(default_factory=list)
    figlu_scale: float | None = None  # None -> 1/sqrt(d) per layer
    asym_seed: int = 0
    init_seed: int = 0

    def __post_init__(self):
        self.widths = [int(w) for w in self.widths]
        n_layers = len(self.widths) - 1
        if not self.n_fix:
            self.n_fix = [0] * n_layers
        if not self.kappa:
            self.kappa = [0.0] * n_layers
        self.n_fix = [int(n) for n in self.n_fix]
        self.kappa = [float(k) for k in self.kappa]

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    def validate(self, sampled_masks: bool = True) -> None:
        """Check invariants; ``sampled_masks=False`` skips the distinct-row feasibility test
        for models whose masks are supplied explicitly."""
        if len(self.widths) < 2 or any(w < 1 for w in self.widths):
            raise ConfigError("widths must list at least two positive sizes")
        if self.asym_mode not in ASYM_MODES:
            raise ConfigError(f"asym_mode must be one of {ASYM_MODES}")
        if self.nonlinearity not in NONLINEARITIES:
            raise ConfigError(f"nonlinearity must be one of {NONLINEARITIES}")
        if len(self.n_fix) != self.n_layers or len(self.kappa) != self.n_layers:
            raise ConfigError("need one n_fix and one kappa per linear layer")
        if any(k < 0 for k in self.kappa):
            raise ConfigError("kappa must be non-negative")
        if self.layernorm and any(w < 2 for w in self.widths[1:-1]):
            raise ConfigError("layernorm needs hidden widths >= 2")
        if self.figlu_scale is not None and self.figlu_scale <= 0:
            raise ConfigError("figlu_scale must be positive")
        if self.asym_mode == "w_asym":
            if self.nonlinearity != "relu":
                raise ConfigError("w_asym requires the relu nonlinearity")
            for i, n in enumerate(self.n_fix):
                d2, d1 = self.widths[i + 1], self.widths[i]
                if n < 1 or n >= d1:
                    raise ConfigError(f"layer {i}: need 1 <= n_fix < {d1}, got {n}")
                if sampled_masks and math.comb(d1, n) < d2:
                    raise ConfigError(f"layer {i}: C({d1},{n}) < {d2}, rows cannot be distinct")
        else:
            if any(n != 0 for n in self.n_fix):
                raise ConfigError(f"{self.asym_mode} requires n_fix = 0 everywhere")
            want = "figlu" if self.asym_mode == "sigma_asym" else "relu"
            if self.nonlinearity != want:
                raise ConfigError(f"{self.asym_mode} requires the {want} nonlinearity")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown model keys: {sorted(unknown)}")
        return cls(**d)


def table4_config(asym_mode: str = "w_asym", width: int = 512, **kw) -> ModelConfig:
    """The depth-4 LayerNorm MNIST MLP, optionally at reduced width."""
    widths = [784, width, width, width, 10]
    if asym_mode == "w_asym":
        scale = width / 512
        n_fix = [max(1, round(n * scale)) for n in TABLE4_N_FIX]
        return ModelConfig(widths, "w_asym", "relu", True, True, n_fix, list(TABLE4_KAPPA), **kw)
    nonlin = "figlu" if asym_mode == "sigma_asym" else "relu"
    return ModelConfig(widths, asym_mode, nonlin, True, **kw)


# ---------------------------------------------------------------- masks

def generate_mask(d2: int, d1: int, n_fix: int, rng: np.random.Generator) -> np.ndarray:
    """Binary ``d2 x d1`` mask; each row has ``n_fix`` zeros (fixed slots), rows distinct."""
    if n_fix < 0 or n_fix >= d1:
        raise InfeasibleMaskError(f"n_fix must satisfy 0 <= n_fix < d1 (got {n_fix}, d1={d1})")
    if n_fix == 0 and d2 > 1:
        raise InfeasibleMaskError("n_fix = 0 gives identical all-ones rows")
    if math.comb(d1, n_fix) < d2:
        raise InfeasibleMaskError(f"only C({d1},{n_fix}) = {math.comb(d1, n_fix)} patterns for {d2} rows")
    mask = np.ones((d2, d1), dtype=np.uint8)
    seen: set[bytes] = set()
    for r in range(d2):
        while True:
            row = np.ones(d1, dtype=np.uint8)
            row[rng.choice(d1, size=n_fix, replace=False)] = 0
            key = row.tobytes()
            if key not in seen:  # resample only the duplicate row
                break
        seen.add(key)
        mask[r] = row
    return mask


def sample_fixed(mask: np.ndarray, kappa: float, rng: np.random.Generator) -> np.ndarray:
    """Gaussian fixed values (std ``kappa``) at the zeros of ``mask``; exact 0 elsewhere."""
    if kappa < 0:
        raise ValueError("kappa must be non-negative")
    fixed = np.zeros(mask.shape, dtype=np.float64)
    slots = mask == 0
    fixed[slots] = rng.normal(0.0, kappa, size=int(slots.sum())) if kappa > 0 else 0.0
    return fixed


def sample_figlu_matrix(d: int, scale: float, rng: np.random.Generator) -> np.ndarray:
    # zero or repeated entries happen with probability 0, but are checked anyway
    while True:
        F = rng.normal(0.0, scale, size=(d, d))
        if np.all(F != 0) and np.unique(F).size == F.size:
            return F


# ---------------------------------------------------------------- layers

class MaskedLinear:
    """Affine map with effective weight ``M*W + (1-M)*F``; a standard layer when ``mask`` is None."""

    def __init__(self, weight: np.ndarray, bias: np.ndarray | None,
                 mask: np.ndarray | None = None, fixed: np.ndarray | None = None,
                 kappa: float = 0.0):
        d2, d1 = weight.shape
        self.mask = None if mask is None else np.asarray(mask, dtype=np.uint8)
        if self.mask is not None:
            if self.mask.shape != (d2, d1):
                raise ValueError("mask shape must match weight")
            fixed = np.zeros((d2, d1)) if fixed is None else np.asarray(fixed, dtype=np.float64)
            fixed = np.where(self.mask == 1, 0.0, fixed)
            weight = np.where(self.mask == 1, weight, 0.0)
        self.fixed = fixed
        self.kappa = kappa
        self.weight = Tensor(weight, requires_grad=True)
        self.bias = None if bias is None else Tensor(bias, requires_grad=True)
        if self.mask is not None:
            self._mask_t = Tensor(self.mask.astype(np.float64))
            self._fixed_t = Tensor(self.fixed)

    @property
    def n_fix(self) -> int:
        return 0 if self.mask is None else int((self.mask[0] == 0).sum())

    @property
    def shape(self) -> tuple[int, int]:
        return self.weight.shape

    def effective_weight(self) -> Tensor:
        if self.mask is None:
            return self.weight
        return ag.add(ag.mul(self.weight, self._mask_t), self._fixed_t)

    def effective_weight_array(self) -> np.ndarray:
        if self.mask is None:
            return self.weight.data.copy()
        return self.mask * self.weight.data + (1 - self.mask) * self.fixed

    def __call__(self, x) -> Tensor:
        x = ag.as_tensor(x)
        if x.data.ndim != 2 or x.shape[1] != self.shape[1]:
            raise ValueError(f"input width {x.shape} does not match layer {self.shape}")
        out = ag.matmul(x, ag.transpose(self.effective_weight()))
        return out if self.bias is None else ag.add_rowwise(out, self.bias)

    def n_trainable(self) -> int:
        d2, d1 = self.shape
        nb = 0 if self.bias is None else d2
        n_w = d2 * d1 if self.mask is None else int(self.mask.sum())
        return n_w + nb


def masked_linear_forward(layer: MaskedLinear, x) -> Tensor:
    x = ag.as_tensor(x)
    if x.data.ndim == 1:
        return _squeeze(layer(_row(x)))
    return layer(x)


class FiGLU:
    """Fixed gated linear unit ``sigmoid(F x) * x`` with an untrained ``F``."""

    def __init__(self, F: np.ndarray, scale: float | None = None):
        F = np.asarray(F, dtype=np.float64)
        if F.ndim != 2 or F.shape[0] != F.shape[1]:
            raise ValueError("FiGLU matrix must be square")
        self.F = F
        self.scale = scale
        self._FT = Tensor(F.T)

    @property
    def d(self) -> int:
        return self.F.shape[0]

    def __call__(self, x) -> Tensor:
        x = ag.as_tensor(x)
        if x.data.ndim != 2 or x.shape[1] != self.d:
            raise ValueError(f"FiGLU of size {self.d} got input {x.shape}")
        return ag.mul(ag.sigmoid(ag.matmul(x, self._FT)), x)

    def numpy(self, x: np.ndarray) -> np.ndarray:
        """Plain-array evaluation on rows of ``x`` (used by the symmetry falsifiers)."""
        return ag._sigmoid(x @ self.F.T) * x


def figlu_forward(layer: FiGLU, x) -> Tensor:
    x = ag.as_tensor(x)
    if x.data.ndim == 1:
        return _squeeze(layer(_row(x)))
    return layer(x)


def _row(x: Tensor) -> Tensor:
    return ag.reshape(x, (1, x.shape[0]))


def _squeeze(x: Tensor) -> Tensor:
    return ag.reshape(x, (x.shape[-1],))


# ---------------------------------------------------------------- model

class MLP:
    """Linear -> [LayerNorm] -> nonlinearity blocks, then a final linear readout."""

    def __init__(self, config: ModelConfig, linears: list[MaskedLinear],
                 norms: list[tuple[Tensor, Tensor]] | None, figlus: list[FiGLU] | None):
        self.config = config
        self.linears = linears
        self.norms = norms
        self.figlus = figlus

    # -- forward
    def __call__(self, x) -> Tensor:
        h = ag.as_tensor(x)
        last = len(self.linears) - 1
        for i, lin in enumerate(self.linears):
            h = lin(h)
            if i == last:
                break
            if self.norms is not None:
                g, b = self.norms[i]
                h = ag.layernorm(h, g, b)
            h = self.figlus[i](h) if self.figlus is not None else ag.relu(h)
        return h

    def predict(self, x: np.ndarray) -> np.ndarray:
        with ag.no_grad():
            return self(x).data

    # -- parameters
    def named_params(self) -> list[tuple[str, Tensor]]:
        out = []
        for i, lin in enumerate(self.linears):
            out.append((f"linear{i}.weight", lin.weight))
            if lin.bias is not None:
                out.append((f"linear{i}.bias", lin.bias))
            if self.norms is not None and i < len(self.norms):
                out.append((f"norm{i}.gain", self.norms[i][0]))
                out.append((f"norm{i}.bias", self.norms[i][1]))
        return out

    def params(self) -> list[Tensor]:
        return [p for _, p in self.named_params()]

    def trainable_masks(self) -> dict[str, np.ndarray | None]:
        """Per-parameter boolean update masks (None = every entry trainable)."""
        masks: dict[str, np.ndarray | None] = {name: None for name, _ in self.named_params()}
        for i, lin in enumerate(self.linears):
            if lin.mask is not None:
                masks[f"linear{i}.weight"] = lin.mask.astype(bool)
        return masks

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_params()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        named = dict(self.named_params())
        if set(named) != set(state):
            raise ValueError("state keys do not match the model")
        for name, p in named.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data = arr.copy()
            p.grad = None

    def n_trainable(self) -> int:
        n = sum(lin.n_trainable() for lin in self.linears)
        if self.norms is not None:
            n += sum(g.data.size + b.data.size for g, b in self.norms)
        return n

    def zero_grad(self) -> None:
        for p in self.params():
            p.grad = None

    # -- asymmetry payload
    def asym_payload(self) -> list[tuple[str, np.ndarray]]:
        """Masks, fixed matrices and FiGLU matrices in declared layer order."""
        items: list[tuple[str, np.ndarray]] = []
        for i, lin in enumerate(self.linears):
            if lin.mask is not None:
                items.append((f"linear{i}.mask", lin.mask))
                items.append((f"linear{i}.fixed", lin.fixed))
        if self.figlus is not None:
            for i, f in enumerate(self.figlus):
                items.append((f"figlu{i}.F", f.F))
        return items

    def asym_hash(self) -> str:
        return payload_hash(self.asym_payload())

    def clone(self) -> "MLP":
        other = build_model(self.config, dict(self.asym_payload()))
        other.load_state(self.state())
        return other


def payload_hash(items: list[tuple[str, np.ndarray]]) -> str:
    h = hashlib.sha256()
    for name, arr in items:
        arr = np.ascontiguousarray(arr)
        dt = "u1" if arr.dtype == np.uint8 else "<f8"
        h.update(f"{name}|{dt}|{arr.shape}\n".encode())
        h.update(arr.astype(dt).tobytes())
    return h.hexdigest()


def build_model(config: ModelConfig, payload: dict[str, np.ndarray] | None = None) -> MLP:
    """Build an MLP; masks/fixed/FiGLU matrices come from ``asym_seed`` unless ``payload`` supplies them."""
    config.validate(sampled_masks=payload is None)
    asym_rng = np.random.default_rng(config.asym_seed)
    init_rng = np.random.default_rng(config.init_seed)
    widths = config.widths
    linears = []
    for i in range(config.n_layers):
        d1, d2 = widths[i], widths[i + 1]
        mask = fixed = None
        if config.asym_mode == "w_asym":
            if payload is None:
                mask = generate_mask(d2, d1, config.n_fix[i], asym_rng)
                fixed = sample_fixed(mask, config.kappa[i], asym_rng)
            else:
                mask, fixed = payload[f"linear{i}.mask"], payload[f"linear{i}.fixed"]
                if mask.shape != (d2, d1):
                    raise ConfigError(f"payload mask {i} has shape {mask.shape}")
        bound = 1.0 / math.sqrt(d1)
        weight = init_rng.uniform(-bound, bound, size=(d2, d1))
        bias = init_rng.uniform(-bound, bound, size=d2) if config.bias else None
        linears.append(MaskedLinear(weight, bias, mask, fixed, config.kappa[i]))
    norms = None
    if config.layernorm:
        norms = [(Tensor(np.ones(w), requires_grad=True), Tensor(np.zeros(w), requires_grad=True))
                 for w in widths[1:-1]]
    figlus = None
    if config.asym_mode == "sigma_asym":
        figlus = []
        for i, w in enumerate(widths[1:-1]):
            scale = config.figlu_scale if config.figlu_scale is not None else 1.0 / math.sqrt(w)
            F = sample_figlu_matrix(w, scale, asym_rng) if payload is None else payload[f"figlu{i}.F"]
            figlus.append(FiGLU(F, scale))
    return MLP(config, linears, norms, figlus)
