from __future__ import annotations

from typing import Iterator

import numpy as np

from .numerics import Rng, Tensor


class Module:
    """Attribute-scanning parameter container.

    Parameters are ``Tensor`` attributes created with ``requires_grad=True``
    through :meth:`param`; sub-modules and lists of sub-modules are walked in
    attribute order so names are stable across runs.
    """

    def param(self, data: np.ndarray, name: str) -> Tensor:
        t = Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)
        return t

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for attr, value in vars(self).items():
            if attr.startswith("_"):
                continue
            name = f"{prefix}{attr}"
            if isinstance(value, Tensor):
                if value.name is not None:
                    yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Tensor) and item.name is not None:
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def set_trainable(self, flag: bool) -> None:
        for p in self.parameters():
            p.requires_grad = flag
            if not flag:
                p.grad = None


def linear_init(rng: Rng, fan_in: int, fan_out: int) -> np.ndarray:
    return rng.normal((fan_in, fan_out), scale=fan_in ** -0.5)
