"""Small fully connected ReLU networks with hand-written backpropagation."""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Layer:
    W: np.ndarray  # (fan_in, fan_out)
    b: np.ndarray  # (fan_out,); zeros and frozen when the net has no bias


@dataclass
class ForwardCache:
    inputs: list  # activation entering each layer
    pre: list  # pre-activation leaving each layer
    output: np.ndarray


@dataclass
class ShallowNet:
    """MLP with 1 to 3 linear layers, ReLU between them and a linear output.

    Parameters are stored per layer. ``radii`` holds an optional Frobenius
    trust radius per weight matrix; biases are never constrained.
    """

    layers: list
    use_bias: bool = True
    radii: list = field(default_factory=list)

    @classmethod
    def init(cls, sizes, seed=0, use_bias=True, radii=None, rng=None):
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization.

        ``sizes`` is ``[input_dim, hidden..., output_dim]`` with 1 to 3 layers.
        """
        sizes = [int(s) for s in sizes]
        if not 2 <= len(sizes) <= 4:
            raise ValueError(f"need 1 to 3 layers, got sizes {sizes}")
        rng = np.random.default_rng(seed) if rng is None else rng
        layers = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            W = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            b = rng.uniform(-bound, bound, size=fan_out) if use_bias else np.zeros(fan_out)
            layers.append(Layer(W, b))
        radii = list(radii) if radii is not None else []
        if radii and len(radii) != len(layers):
            raise ValueError(f"got {len(radii)} trust radii for {len(layers)} layers")
        return cls(layers, use_bias, radii)

    @property
    def depth(self):
        return len(self.layers)

    @property
    def sizes(self):
        return [self.layers[0].W.shape[0]] + [lay.W.shape[1] for lay in self.layers]

    @property
    def n_params(self):
        per = [lay.W.size + (lay.b.size if self.use_bias else 0) for lay in self.layers]
        return int(sum(per))

    def copy(self):
        layers = [Layer(lay.W.copy(), lay.b.copy()) for lay in self.layers]
        return ShallowNet(layers, self.use_bias, list(self.radii))

    def forward(self, X, cache=False):
        a = np.asarray(X, dtype=float)
        inputs, pre = [], []
        for i, lay in enumerate(self.layers):
            inputs.append(a)
            z = a @ lay.W + lay.b
            pre.append(z)
            a = z if i == self.depth - 1 else np.maximum(z, 0.0)
        if cache:
            return a, ForwardCache(inputs, pre, a)
        return a

    __call__ = forward

    def backward(self, fc, dout):
        """Gradients of ``sum(dout * output)`` with respect to every parameter.

        Returns a list of ``(dW, db)`` pairs, ``db`` is zeros without bias.
        """
        grads = [None] * self.depth
        delta = np.asarray(dout, dtype=float)
        for i in range(self.depth - 1, -1, -1):
            dW = fc.inputs[i].T @ delta
            db = delta.sum(axis=0) if self.use_bias else np.zeros_like(self.layers[i].b)
            grads[i] = (dW, db)
            if i > 0:
                delta = (delta @ self.layers[i].W.T) * (fc.pre[i - 1] > 0)
        return grads

    def jacobian(self, X):
        """Per-example parameter Jacobian, shape ``(n, n_outputs, n_params)``."""
        X = np.asarray(X, dtype=float)
        _, fc = self.forward(X, cache=True)
        n, k_out = X.shape[0], self.sizes[-1]
        J = np.empty((n, k_out, self.n_params))
        for k in range(k_out):
            delta = np.zeros((n, k_out))
            delta[:, k] = 1.0
            blocks = [None] * self.depth
            for i in range(self.depth - 1, -1, -1):
                per_w = np.einsum("ni,nj->nij", fc.inputs[i], delta).reshape(n, -1)
                blocks[i] = [per_w, delta] if self.use_bias else [per_w]
                if i > 0:
                    delta = (delta @ self.layers[i].W.T) * (fc.pre[i - 1] > 0)
            J[:, k, :] = np.concatenate([b for pair in blocks for b in pair], axis=1)
        return J

    def flatten(self, grads=None):
        """Concatenate parameters (or a gradient list) into one vector."""
        pairs = [(lay.W, lay.b) for lay in self.layers] if grads is None else grads
        parts = []
        for W, b in pairs:
            parts.append(np.ravel(W))
            if self.use_bias:
                parts.append(np.ravel(b))
        return np.concatenate(parts)

    def unflatten(self, vec):
        """Split a flat vector into ``(W, b)`` pairs shaped like the layers."""
        vec = np.asarray(vec, dtype=float)
        out, k = [], 0
        for lay in self.layers:
            W = vec[k : k + lay.W.size].reshape(lay.W.shape)
            k += lay.W.size
            if self.use_bias:
                b = vec[k : k + lay.b.size].copy()
                k += lay.b.size
            else:
                b = np.zeros_like(lay.b)
            out.append((W.copy(), b))
        if k != vec.size:
            raise ValueError(f"vector has {vec.size} entries, net has {k} parameters")
        return out

    def set_flat(self, vec):
        for lay, (W, b) in zip(self.layers, self.unflatten(vec)):
            lay.W, lay.b = W, b
        return self

    def weight_norms(self):
        return np.array([np.linalg.norm(lay.W) for lay in self.layers])

    def weight_sq_sum(self):
        return float(sum(np.sum(lay.W * lay.W) for lay in self.layers))


def linear_net(weights):
    """Single-layer net without bias, ``f(x) = x @ weights``."""
    W = np.atleast_2d(np.asarray(weights, dtype=float))
    if W.shape[0] == 1 and W.shape[1] > 1 and np.ndim(weights) == 1:
        W = W.T
    return ShallowNet([Layer(W, np.zeros(W.shape[1]))], use_bias=False)
