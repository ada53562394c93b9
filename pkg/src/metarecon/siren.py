"""Sinusoidal occupancy network: 3D coordinate -> inside probability.

Seven linear layers, 128 hidden units, sine activations with a frequency
factor on the first layer, logistic head.  Weights follow the standard
sinusoidal-network initialization: first layer uniform in +-1/in_dim, hidden
layers uniform in +-sqrt(6/fan_in)/omega0, biases zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import DimensionError


@dataclass(frozen=True)
class NetSpec:
    in_dim: int = 3
    hidden_dim: int = 128
    n_linear_layers: int = 7
    omega0: float = 30.0

    def layer_widths(self):
        """(fan_in, fan_out) per linear layer."""
        dims = (
            [self.in_dim]
            + [self.hidden_dim] * (self.n_linear_layers - 1)
            + [1]
        )
        return list(zip(dims[:-1], dims[1:]))

    def param_count(self):
        return sum(a * b + b for a, b in self.layer_widths())


class OccupancyNet:
    """A NetSpec plus its parameter vector."""

    def __init__(self, spec: NetSpec, params: ad.ParamVector):
        self.spec = spec
        self.params = params


def param_names(spec: NetSpec):
    names = []
    for i in range(spec.n_linear_layers):
        names += [f"W{i}", f"b{i}"]
    return names


def init_siren(spec: NetSpec, seed: int) -> OccupancyNet:
    """Deterministic sinusoidal initialization for a given seed."""
    rng = np.random.default_rng(seed)
    entries = []
    for i, (fan_in, fan_out) in enumerate(spec.layer_widths()):
        if i == 0:
            bound = 1.0 / fan_in
        else:
            bound = np.sqrt(6.0 / fan_in) / spec.omega0
        W = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        b = np.zeros(fan_out)
        entries.append((f"W{i}", ad.constant(W)))
        entries.append((f"b{i}", ad.constant(b)))
    return OccupancyNet(spec, ad.ParamVector(entries))


def forward_logits(spec: NetSpec, params: ad.ParamVector, coords) -> ad.Tensor:
    """Pre-sigmoid activations, N x 1. Records on the active tape."""
    coords = ad._as_tensor(coords)
    if coords.data.ndim != 2 or coords.data.shape[1] != spec.in_dim:
        raise DimensionError(
            f"coords must be N x {spec.in_dim}, got {coords.shape}"
        )
    tensors = params.tensors()
    h = coords
    n = spec.n_linear_layers
    for i in range(n):
        W, b = tensors[2 * i], tensors[2 * i + 1]
        z = ad.broadcast_add(ad.matmul(h, W), b)
        if i == n - 1:
            return z
        if i == 0:
            z = ad.scalar_mul(z, spec.omega0)
        h = ad.sin(z)
    return z


def forward(net: OccupancyNet, coords) -> ad.Tensor:
    """Occupancy probabilities in (0, 1), shape N x 1."""
    return ad.sigmoid(forward_logits(net.spec, net.params, coords))
