"""
Reverse-mode automatic differentiation layer.

All model math runs through PyTorch autograd in float64 on the CPU. This
module pins that numerical contract down and adds the small pieces the
rest of the toolkit relies on:

- configure_torch(): dtype, determinism and thread settings for a run
- the op-set used by graphs, parameterizations and losses, with shape checks
  that raise ShapeError instead of opaque RuntimeErrors
- Graph / forward(): a named tape of ops replayed on demand, reporting the
  first node that produces a non-finite value
- gradient(): exact reverse-mode gradients; with differentiable=True the
  backward pass is itself recorded so the result can be differentiated
  again (double backprop, needed by the gradient-matching attack loss)

Copyright 2025 Tejaswi Mahapatra
Licensed under the Apache License, Version 2.0
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import torch
import torch.nn.functional as F

from slingshot.core.errors import GraphError, NumericalError, ShapeError

logger = logging.getLogger(__name__)

DTYPE = torch.float64


def configure_torch(num_threads: Optional[int] = None, seed: Optional[int] = None) -> None:
    """
    Apply the process-wide numerical settings.

    Args:
        num_threads: Intra-op thread count (None keeps torch's default)
        seed: Global torch seed, for code paths without an explicit generator
    """
    torch.set_default_dtype(DTYPE)
    torch.use_deterministic_algorithms(True)
    if num_threads:
        torch.set_num_threads(num_threads)
    if seed is not None:
        torch.manual_seed(seed)


def as_tensor(values: Any, requires_grad: bool = False) -> torch.Tensor:
    """Convert array-like input to a float64 tensor."""
    tensor = torch.as_tensor(values, dtype=DTYPE).clone()
    return tensor.requires_grad_(requires_grad)


def generator(seed: int) -> torch.Generator:
    """Seeded CPU generator; every random draw in the toolkit takes one."""
    gen = torch.Generator()
    gen.manual_seed(int(seed))
    return gen


def is_finite(tensor: torch.Tensor) -> bool:
    return bool(torch.isfinite(tensor).all())


# Op-set


def matmul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    inner_b = b.shape[0] if b.dim() == 1 else b.shape[-2]
    if a.shape[-1] != inner_b:
        raise ShapeError(f"matmul: inner dimensions differ ({tuple(a.shape)} @ {tuple(b.shape)})")
    return a @ b


def linear_map(x: torch.Tensor, matrix: torch.Tensor) -> torch.Tensor:
    """x -> x @ Mᵀ with M held fixed (never receives gradients)."""
    if matrix.dim() != 2 or x.shape[-1] != matrix.shape[1]:
        raise ShapeError(
            f"linear_map: matrix {tuple(matrix.shape)} cannot act on last dim of {tuple(x.shape)}"
        )
    return x @ matrix.detach().T


def conv2d(
    x: torch.Tensor,
    weight: torch.Tensor,
    bias: Optional[torch.Tensor] = None,
    stride: int = 1,
    padding: int = 0,
) -> torch.Tensor:
    if x.dim() != 4 or weight.dim() != 4:
        raise ShapeError("conv2d: expected (N, C, H, W) input and (O, C, kH, kW) weight")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(
            f"conv2d: input has {x.shape[1]} channels, weight expects {weight.shape[1]}"
        )
    if x.shape[2] + 2 * padding < weight.shape[2] or x.shape[3] + 2 * padding < weight.shape[3]:
        raise ShapeError("conv2d: kernel larger than padded input")
    return F.conv2d(x, weight, bias, stride=stride, padding=padding)


def max_pool2d(x: torch.Tensor, kernel_size: int = 2, stride: Optional[int] = None) -> torch.Tensor:
    if x.dim() != 4:
        raise ShapeError("max_pool2d: expected (N, C, H, W) input")
    if x.shape[2] < kernel_size or x.shape[3] < kernel_size:
        raise ShapeError("max_pool2d: window larger than input")
    # double backward routes through the argmax indices saved by the forward pass
    return F.max_pool2d(x, kernel_size, stride=stride)


def relu(x: torch.Tensor) -> torch.Tensor:
    return torch.relu(x)


def tanh(x: torch.Tensor) -> torch.Tensor:
    return torch.tanh(x)


def sigmoid(x: torch.Tensor) -> torch.Tensor:
    return torch.sigmoid(x)


def inverse_sigmoid(x: torch.Tensor, margin: float = 0.0) -> torch.Tensor:
    """Logit; with margin > 0 the input is clamped into [margin, 1 - margin] first."""
    if margin > 0.0:
        x = x.clamp(margin, 1.0 - margin)
    return torch.logit(x)


def softmax(x: torch.Tensor, dim: int = -1) -> torch.Tensor:
    return torch.softmax(x, dim=dim)


def _broadcastable(a: torch.Tensor, b: torch.Tensor, op: str) -> None:
    try:
        torch.broadcast_shapes(a.shape, b.shape)
    except RuntimeError as exc:
        raise ShapeError(f"{op}: shapes {tuple(a.shape)} and {tuple(b.shape)} do not broadcast") from exc


def add(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    _broadcastable(a, b, "add")
    return a + b


def sub(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    _broadcastable(a, b, "sub")
    return a - b


def mul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    _broadcastable(a, b, "mul")
    return a * b


def pow(a: torch.Tensor, exponent: float) -> torch.Tensor:  # noqa: A001
    return a**exponent


def sum(x: torch.Tensor, dim: Optional[Union[int, Tuple[int, ...]]] = None) -> torch.Tensor:  # noqa: A001
    return x.sum() if dim is None else x.sum(dim=dim)


def mean(x: torch.Tensor, dim: Optional[Union[int, Tuple[int, ...]]] = None) -> torch.Tensor:
    return x.mean() if dim is None else x.mean(dim=dim)


def l2_norm_squared(x: torch.Tensor, dim: Optional[Union[int, Tuple[int, ...]]] = None) -> torch.Tensor:
    """Sum of squares over `dim` (all elements when None)."""
    return (x * x).sum() if dim is None else (x * x).sum(dim=dim)


def flatten_batch(x: torch.Tensor) -> torch.Tensor:
    """(N, ...) -> (N, prod(...))."""
    return x.reshape(x.shape[0], -1)


OPS: Dict[str, Callable[..., torch.Tensor]] = {
    "matmul": matmul,
    "linear_map": linear_map,
    "conv2d": conv2d,
    "max_pool2d": max_pool2d,
    "relu": relu,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "inverse_sigmoid": inverse_sigmoid,
    "softmax": softmax,
    "add": add,
    "sub": sub,
    "mul": mul,
    "pow": pow,
    "sum": sum,
    "mean": mean,
    "l2_norm_squared": l2_norm_squared,
    "flatten": flatten_batch,
}


# Graph


@dataclass
class Node:
    """One recorded operation: op kind, named inputs, constant keyword params."""
    name: str
    op: str
    inputs: Tuple[str, ...]
    params: Dict[str, Any] = field(default_factory=dict)


class Graph:
    """
    A named tape of operations.

    Nodes are appended in topological order (every input must already be a
    declared input or an earlier node), so the tape is acyclic by
    construction. forward() replays it on fresh tensors; since torch builds
    its autograd graph dynamically, every replay records a new graph and
    nothing is cached between steps.

    Example:
        >>> g = Graph(inputs=["x"])
        >>> g.add("y", "pow", "x", exponent=2)
        >>> forward(g, {"x": as_tensor(3.0)})["y"]
        tensor(9.)
    """

    def __init__(self, inputs: Sequence[str]):
        self.input_names: Tuple[str, ...] = tuple(inputs)
        self.nodes: List[Node] = []
        self.intermediates: Dict[str, torch.Tensor] = {}

    def _known(self) -> set:
        return set(self.input_names) | {node.name for node in self.nodes}

    def add(self, name: str, op: str, *inputs: str, **params: Any) -> "Graph":
        if op not in OPS:
            raise GraphError(f"Unknown op '{op}'")
        known = self._known()
        if name in known:
            raise GraphError(f"Node name '{name}' already used")
        missing = [i for i in inputs if i not in known]
        if missing:
            raise GraphError(f"Node '{name}' references undefined inputs {missing}")
        self.nodes.append(Node(name=name, op=op, inputs=tuple(inputs), params=dict(params)))
        return self

    @property
    def outputs(self) -> List[str]:
        consumed = {i for node in self.nodes for i in node.inputs}
        return [node.name for node in self.nodes if node.name not in consumed]

    def __iter__(self) -> Iterator[Node]:
        return iter(self.nodes)

    def __len__(self) -> int:
        return len(self.nodes)


def forward(graph: Graph, inputs: Mapping[str, torch.Tensor]) -> Dict[str, torch.Tensor]:
    """
    Evaluate every node of the graph.

    Args:
        graph: Recorded tape
        inputs: Tensor for every declared input name

    Returns:
        Dict with all node values (intermediates included, also kept on
        graph.intermediates for the backward pass)

    Raises:
        GraphError: an input is unbound
        ShapeError: an op's shape rule is violated
        NumericalError: a node produced a non-finite value (names the node)
    """
    unbound = [name for name in graph.input_names if name not in inputs]
    if unbound:
        raise GraphError(f"Unbound graph inputs: {unbound}")

    values: Dict[str, torch.Tensor] = {name: inputs[name] for name in graph.input_names}
    for node in graph:
        args = [values[i] for i in node.inputs]
        try:
            out = OPS[node.op](*args, **node.params)
        except ShapeError as exc:
            raise ShapeError(f"node '{node.name}': {exc}") from exc
        except RuntimeError as exc:
            raise ShapeError(f"node '{node.name}' ({node.op}): {exc}") from exc
        if not is_finite(out):
            raise NumericalError("Non-finite intermediate value", node=node.name)
        values[node.name] = out

    graph.intermediates = values
    return values


# Gradients


@dataclass
class GradientBundle:
    """
    Gradients keyed by parameter handle.

    Attributes:
        grads: handle -> gradient tensor, same shape as the parameter
        differentiable: True when the gradients are graph nodes themselves
    """
    grads: Dict[Union[str, int], torch.Tensor]
    differentiable: bool

    def __getitem__(self, key: Union[str, int]) -> torch.Tensor:
        return self.grads[key]

    def __len__(self) -> int:
        return len(self.grads)

    def values(self) -> List[torch.Tensor]:
        return list(self.grads.values())

    def flat(self) -> torch.Tensor:
        """All gradients concatenated into one vector (handle order)."""
        return torch.cat([g.reshape(-1) for g in self.grads.values()])


def gradient(
    output: torch.Tensor,
    wrt: Union[Mapping[str, torch.Tensor], Sequence[torch.Tensor]],
    differentiable: bool = False,
) -> GradientBundle:
    """
    Exact reverse-mode gradient of a scalar.

    Args:
        output: Scalar tensor
        wrt: Tensors to differentiate against, either named or positional
        differentiable: Record the backward pass so the returned gradients
            can be differentiated again (e.g. w.r.t. model parameters)

    Returns:
        GradientBundle keyed by the names (or positions) of `wrt`

    Raises:
        GraphError: output is not scalar, or a wrt tensor is not part of
            the output's graph

    Example:
        >>> x = as_tensor(2.0, requires_grad=True)
        >>> dx = gradient(x**3, [x], differentiable=True)[0]
        >>> gradient(dx, [x])[0]
        tensor(12.)
    """
    if output.numel() != 1:
        raise GraphError(f"gradient: output must be scalar, got shape {tuple(output.shape)}")
    if not output.requires_grad:
        raise GraphError("gradient: output is a constant, nothing was recorded")

    if isinstance(wrt, Mapping):
        keys: List[Union[str, int]] = list(wrt.keys())
        tensors = list(wrt.values())
    else:
        tensors = list(wrt)
        keys = list(range(len(tensors)))

    detached = [key for key, t in zip(keys, tensors) if not t.requires_grad]
    if detached:
        raise GraphError(f"gradient: tensors {detached} are not part of the graph")

    grads = torch.autograd.grad(
        output.reshape(()),
        tensors,
        create_graph=differentiable,
        retain_graph=True,
        allow_unused=True,
    )
    unused = [key for key, g in zip(keys, grads) if g is None]
    if unused:
        raise GraphError(f"gradient: tensors {unused} do not appear in the output's graph")

    return GradientBundle(grads=dict(zip(keys, grads)), differentiable=differentiable)
