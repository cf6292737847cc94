"""Dense layers, MLPs, the Adam optimizer and parameter checkpoints."""

from __future__ import annotations

import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

ACTIVATIONS = ("tanh", "leaky_relu", "relu", "identity", "softmax")


def activate(x: Tensor, name: str) -> Tensor:
    if name == "tanh":
        return ad.tanh(x)
    if name == "leaky_relu":
        return ad.leaky_relu(x, 0.2)
    if name == "relu":
        return ad.relu(x)
    if name == "softmax":
        return ad.softmax(x, axis=-1)
    if name == "identity":
        return x
    raise ValueError(f"unknown activation {name!r}")


class Module:
    training = True

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        out = []
        for key, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                out.append((prefix + key, value))
            elif isinstance(value, Module):
                out.extend(value.named_parameters(f"{prefix}{key}."))
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.extend(item.named_parameters(f"{prefix}{key}.{i}."))
        return out

    def buffers(self, prefix: str = "") -> list[tuple[str, np.ndarray]]:
        out = []
        for key, value in vars(self).items():
            if isinstance(value, Module):
                out.extend(value.buffers(f"{prefix}{key}."))
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.extend(item.buffers(f"{prefix}{key}.{i}."))
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.value.copy() for name, p in self.named_parameters()}
        state.update({name: b.copy() for name, b in self.buffers()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for name, p in self.named_parameters():
            if state[name].shape != p.shape:
                raise ValueError(f"shape mismatch for {name}: {state[name].shape} vs {p.shape}")
            p.value = np.array(state[name], dtype=np.float64)
        for name, _ in self.buffers():
            self._set_buffer(name.split("."), np.array(state[name], dtype=np.float64))

    def _set_buffer(self, path: list[str], value: np.ndarray) -> None:
        obj = self
        for part in path[:-1]:
            obj = obj[int(part)] if isinstance(obj, list) else getattr(obj, part)
        setattr(obj, path[-1], value)

    def train(self, mode: bool = True):
        for m in self._modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def _modules(self):
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value._modules()
            elif isinstance(value, list):
                for item in value:
                    if isinstance(item, Module):
                        yield from item._modules()


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        bound = 1.0 / np.sqrt(n_in)
        self.weight = Tensor(rng.uniform(-bound, bound, size=(n_in, n_out)), requires_grad=True)
        self.bias = Tensor(rng.uniform(-bound, bound, size=(n_out,)), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias


class BatchNorm(Module):
    def __init__(self, width: int, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = Tensor(np.ones(width), requires_grad=True)
        self.beta = Tensor(np.zeros(width), requires_grad=True)
        self.running_mean = np.zeros(width)
        self.running_var = np.ones(width)
        self.momentum = momentum
        self.eps = eps

    def buffers(self, prefix: str = ""):
        return [(prefix + "running_mean", self.running_mean), (prefix + "running_var", self.running_var)]

    def __call__(self, x: Tensor) -> Tensor:
        if self.training and x.shape[0] > 1:
            mu = x.mean(axis=0, keepdims=True)
            centered = x - mu
            var = (centered * centered).mean(axis=0, keepdims=True)
            m = self.momentum
            n = x.shape[0]
            self.running_mean = (1 - m) * self.running_mean + m * mu.value.ravel()
            self.running_var = (1 - m) * self.running_var + m * var.value.ravel() * n / (n - 1)
            xhat = centered / ad.sqrt(var + self.eps)
        else:
            xhat = (x - self.running_mean) / np.sqrt(self.running_var + self.eps)
        return xhat * self.gamma + self.beta


@dataclass
class MlpConfig:
    in_dim: int
    out_dim: int
    hidden: tuple[int, ...] = (250, 250)
    activation: str = "relu"
    output_activation: str = "identity"
    dropout: float = 0.0
    batch_norm: bool = False

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.in_dim < 1 or self.out_dim < 1 or any(h < 1 for h in self.hidden):
            raise ValueError(f"layer widths must be >= 1: {self}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        for name in (self.activation, self.output_activation):
            if name not in ACTIVATIONS:
                raise ValueError(f"unknown activation {name!r}")


class MLP(Module):
    """``Linear -> [BatchNorm] -> activation -> [Dropout]`` blocks and a linear head."""

    def __init__(self, config: MlpConfig, rng: np.random.Generator):
        self.config = config
        widths = (config.in_dim,) + config.hidden
        self.layers = [Linear(a, b, rng) for a, b in zip(widths[:-1], widths[1:])]
        self.norms = [BatchNorm(w) for w in config.hidden] if config.batch_norm else []
        self.head = Linear(widths[-1], config.out_dim, rng)

    def __call__(self, x, rng: np.random.Generator | None = None) -> Tensor:
        x = ad.as_tensor(x)
        cfg = self.config
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if self.norms:
                x = self.norms[i](x)
            x = activate(x, cfg.activation)
            if self.training and cfg.dropout > 0:
                x = dropout(x, cfg.dropout, rng)
        return activate(self.head(x), cfg.output_activation)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; kept units are scaled by ``1 / (1 - rate)``."""
    if rng is None:
        raise ValueError("dropout in training mode needs an explicit rng")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * mask


@dataclass
class Adam:
    """Adam with decoupled weight decay."""

    params: Sequence[Tensor]
    lr: float = 1e-3
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        self.params = list(self.params)
        if not self.m:
            self.m = [np.zeros_like(p.value) for p in self.params]
            self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self, grads: Sequence[Tensor | np.ndarray]) -> None:
        if len(grads) != len(self.params):
            raise ValueError(f"{len(grads)} gradients for {len(self.params)} parameters")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for i, (p, g) in enumerate(zip(self.params, grads)):
            g = g.value if isinstance(g, Tensor) else np.asarray(g, dtype=np.float64)
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            update = (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)
            p.value = p.value * (1.0 - self.lr * self.weight_decay) - self.lr * update


def save_checkpoint(path: str | Path, modules: dict[str, Module], config: dict) -> None:
    """Write parameters of several modules into one ``.npz`` with a JSON config header."""
    arrays = {"__config__": np.array(json.dumps(config, sort_keys=True))}
    for name, module in modules.items():
        for key, value in module.state_dict().items():
            arrays[f"{name}/{key}"] = value
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(buf.getvalue())
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> tuple[dict, dict[str, dict[str, np.ndarray]]]:
    with np.load(path) as f:
        config = json.loads(str(f["__config__"]))
        states: dict[str, dict[str, np.ndarray]] = {}
        for key in f.files:
            if key == "__config__":
                continue
            module, name = key.split("/", 1)
            states.setdefault(module, {})[name] = f[key]
    return config, states


def mlp_config_dict(config: MlpConfig) -> dict:
    d = asdict(config)
    d["hidden"] = list(config.hidden)
    return d
