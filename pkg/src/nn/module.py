"""
Module: base class for every layer, branch and model.

A module owns named parameters (trainable Tensors), named buffers
(non-trainable state such as batch-norm running statistics) and child
modules. Registration order is the iteration order, so parameter names and
their order depend only on how the model is built.

Example:
    class Scale(Module):
        def __init__(self, channels: int):
            super().__init__()
            self.add_param("gamma", np.ones(channels))

        def forward(self, x: Tensor) -> Tensor:
            return ops.mul(x, ops.broadcast_to(self.gamma.reshape(1, -1), x.shape))
"""

from collections import OrderedDict
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from src.core.errors import ContractError, DimensionError
from src.tensor.tensor import Tensor


class ParamRegistry:
    """Ordered dotted-name → Tensor map. Names are unique; order is build order."""

    def __init__(self, items: Optional[Sequence[Tuple[str, Tensor]]] = None):
        self._items: "OrderedDict[str, Tensor]" = OrderedDict()
        for name, t in items or ():
            self.add(name, t)

    def add(self, name: str, t: Tensor) -> None:
        if name in self._items:
            raise ContractError(f"duplicate parameter name '{name}'")
        self._items[name] = t

    def names(self) -> List[str]:
        return list(self._items)

    def items(self):
        return self._items.items()

    def values(self):
        return self._items.values()

    def __getitem__(self, name: str) -> Tensor:
        return self._items[name]

    def __contains__(self, name: str) -> bool:
        return name in self._items

    def __iter__(self) -> Iterator[str]:
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)

    def count(self) -> int:
        """Number of scalar parameters."""
        return int(sum(t.size for t in self._items.values()))


class Module:
    def __init__(self):
        object.__setattr__(self, "_params", OrderedDict())
        object.__setattr__(self, "_buffers", OrderedDict())
        object.__setattr__(self, "_children", OrderedDict())
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Module):
            self._children[name] = value
        elif name in self._children:
            # replaced by a plain callable (tests stub sub-ops this way)
            del self._children[name]
        object.__setattr__(self, name, value)

    # ── Registration ─────────────────────────────────────────────────────
    def add_param(self, name: str, data, dtype: str = "float32") -> Tensor:
        t = Tensor(data, requires_grad=True, dtype=dtype, name=name)
        self._params[name] = t
        object.__setattr__(self, name, t)
        return t

    def add_buffer(self, name: str, data, dtype: str = "float32") -> Tensor:
        t = Tensor(data, dtype=dtype, name=name)
        self._buffers[name] = t
        object.__setattr__(self, name, t)
        return t

    # ── Traversal ────────────────────────────────────────────────────────
    def children(self) -> Iterator[Tuple[str, "Module"]]:
        return iter(self._children.items())

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, child in self._children.items():
            yield from child.modules()

    def named_parameters(self, prefix: str = "") -> Dict[str, Tensor]:
        out: Dict[str, Tensor] = OrderedDict()
        for name, t in self._params.items():
            out[prefix + name] = t
        for cname, child in self._children.items():
            out.update(child.named_parameters(f"{prefix}{cname}."))
        return out

    def named_buffers(self, prefix: str = "") -> Dict[str, Tensor]:
        out: Dict[str, Tensor] = OrderedDict()
        for name, t in self._buffers.items():
            out[prefix + name] = t
        for cname, child in self._children.items():
            out.update(child.named_buffers(f"{prefix}{cname}."))
        return out

    def registry(self) -> ParamRegistry:
        return ParamRegistry(list(self.named_parameters().items()))

    def parameter_count(self) -> int:
        return self.registry().count()

    # ── State ────────────────────────────────────────────────────────────
    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            object.__setattr__(m, "training", mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def astype(self, dtype: str) -> "Module":
        """Convert every parameter and buffer in place (float64 for gradient checks)."""
        for m in self.modules():
            for store in (m._params, m._buffers):
                for name, t in list(store.items()):
                    nt = Tensor(t.data, requires_grad=t.requires_grad, dtype=dtype, name=t.name)
                    store[name] = nt
                    object.__setattr__(m, name, nt)
        return self

    @property
    def dtype(self) -> str:
        for t in self.named_parameters().values():
            return t.dtype
        return "float32"

    def state_arrays(self) -> Dict[str, np.ndarray]:
        """Every parameter and buffer as a numpy array, keyed by kind and dotted name."""
        state = OrderedDict()
        for name, t in self.named_parameters().items():
            state[f"param/{name}"] = t.data
        for name, t in self.named_buffers().items():
            state[f"buffer/{name}"] = t.data
        return state

    def load_registry(self, arrays: Mapping[str, np.ndarray], strict: bool = True) -> None:
        """Inverse of state_arrays()."""
        targets = {f"param/{n}": t for n, t in self.named_parameters().items()}
        targets.update({f"buffer/{n}": t for n, t in self.named_buffers().items()})
        if strict:
            missing = sorted(set(targets) - set(arrays))
            unexpected = sorted(set(arrays) - set(targets))
            if missing or unexpected:
                raise DimensionError(
                    f"state does not match model: missing {missing[:3]}, unexpected {unexpected[:3]}"
                )
        for key, t in targets.items():
            if key in arrays:
                arr = np.asarray(arrays[key])
                if arr.shape != t.shape:
                    raise DimensionError(f"{key}: checkpoint shape {arr.shape} != model shape {t.shape}")
                t.assign(arr)

    # ── Call ─────────────────────────────────────────────────────────────
    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class ModuleList(Module):
    """Children registered as '0', '1', … in order."""

    def __init__(self, modules: Sequence[Module] = ()):
        super().__init__()
        self._list: List[Module] = []
        for m in modules:
            self.append(m)

    def append(self, m: Module) -> None:
        setattr(self, str(len(self._list)), m)
        self._list.append(m)

    def __iter__(self) -> Iterator[Module]:
        return iter(self._list)

    def __len__(self) -> int:
        return len(self._list)

    def __getitem__(self, i: int) -> Module:
        return self._list[i]
