"""Dense kernels and fixed-pipeline reverse-mode differentiation.

The feature extractors used in this package are short stacks of affine
and tanh layers over flattened images. Each forward op can record
itself into a PipelineTrace; pipeline_vjp then pulls the gradient of a
scalar back to the pipeline's first input by accumulating per-layer
vector-Jacobian products right to left.

Everything runs in float64. Traces are single use: one forward build,
one backward pass.
"""

import numpy as np


class ShapeError(ValueError):
    """Tensor dimensions do not conform."""


class TraceError(RuntimeError):
    """PipelineTrace used outside the one-forward/one-backward discipline."""


def as_tensor(values, shape=None):
    """Validate and return a float64, C-contiguous array.

    Rejects NaN/Inf on construction. When `shape` is given the flat data
    is viewed in that shape; a size mismatch raises ShapeError.
    """
    arr = np.asarray(values, dtype=np.float64)
    if shape is not None:
        expected = 1
        for extent in shape:
            expected *= int(extent)
        if arr.size != expected:
            raise ShapeError(
                f"cannot view {arr.size} values as shape {tuple(shape)}"
            )
        arr = arr.reshape(tuple(int(e) for e in shape))
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor contains NaN or Inf")
    return np.ascontiguousarray(arr)


class PipelineTrace:
    """Forward-order record of layer inputs for one backward pass."""

    def __init__(self):
        self.records = []  # ("affine", x, A, b, out) or ("tanh", x, out)
        self.consumed = False

    def _append(self, record):
        if self.consumed:
            raise TraceError("trace already consumed by a backward pass")
        self.records.append(record)

    def cached_outputs(self):
        return [rec[-1] for rec in self.records]

    def replay_forward(self):
        """Recompute the pipeline from the first cached input.

        Returns the recomputed per-layer outputs. Does not consume the
        trace; used to check that replay is bit-identical to the cached
        forward pass.
        """
        if not self.records:
            raise TraceError("cannot replay an empty trace")
        value = self.records[0][1]
        outputs = []
        for rec in self.records:
            if rec[0] == "affine":
                value = rec[2] @ value + rec[3]
            else:
                value = np.tanh(value)
            outputs.append(value)
        return outputs


def affine_forward(x, A, b, trace=None):
    """Return A @ x + b for a vector x, recording into `trace` if given."""
    x = np.asarray(x, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if x.ndim != 1 or A.ndim != 2 or b.ndim != 1:
        raise ShapeError("affine expects x:(n,), A:(m,n), b:(m,)")
    if A.shape[1] != x.shape[0] or A.shape[0] != b.shape[0]:
        raise ShapeError(
            f"affine shapes do not conform: x{x.shape} A{A.shape} b{b.shape}"
        )
    out = A @ x + b
    if trace is not None:
        trace._append(("affine", x, A, b, out))
    return out


def tanh_forward(x, trace=None):
    """Elementwise hyperbolic tangent, recording into `trace` if given."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("tanh input contains NaN or Inf")
    out = np.tanh(x)
    if trace is not None:
        trace._append(("tanh", x, out))
    return out


def pipeline_vjp(trace, upstream):
    """Gradient of a scalar w.r.t. the pipeline's first input.

    `upstream` is the scalar's gradient with respect to the final layer
    output. Accumulates vector-Jacobian products right to left and
    consumes the trace; a second backward pass on the same trace raises
    TraceError.
    """
    if trace.consumed:
        raise TraceError("trace already consumed by a backward pass")
    if not trace.records:
        raise TraceError("cannot backpropagate through an empty trace")
    g = np.asarray(upstream, dtype=np.float64)
    final = trace.records[-1][-1]
    if g.shape != final.shape:
        raise ShapeError(
            f"upstream shape {g.shape} does not match pipeline output {final.shape}"
        )
    for rec in reversed(trace.records):
        if rec[0] == "affine":
            g = rec[2].T @ g
        else:
            y = rec[-1]
            g = g * (1.0 - y * y)
    trace.consumed = True
    return g
