"""Dense feed-forward networks in numpy: forward/backward passes, Adam and a
mini-batch trainer with early stopping."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ..errors import ConfigError, NonFiniteLoss

ACTIVATIONS = ("relu", "leaky_relu", "sigmoid", "linear", "tanh")


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def activate(name, z, alpha=0.3):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "leaky_relu":
        return np.where(z > 0, z, alpha * z)
    if name == "sigmoid":
        return _sigmoid(z)
    if name == "tanh":
        return np.tanh(z)
    return z


def activation_grad(name, z, a, alpha=0.3):
    """Derivative of the activation at pre-activation ``z`` (``a`` = output)."""
    if name == "relu":
        return (z > 0).astype(z.dtype)
    if name == "leaky_relu":
        return np.where(z > 0, 1.0, alpha)
    if name == "sigmoid":
        return a * (1.0 - a)
    if name == "tanh":
        return 1.0 - a * a
    return None  # identity


@dataclass
class NetworkConfig:
    """Architecture and training hyperparameters.

    ``activation`` is either one name for every hidden layer or a list with
    one entry per hidden layer.  ``l1``/``l2`` penalize all weight matrices
    (biases are not penalized).
    """

    hidden: tuple = (8,)
    activation: str | tuple = "relu"
    leaky_alpha: float = 0.3
    output_activation: str = "linear"
    l1: float = 0.0
    l2: float = 0.0
    dropout: float = 0.0
    learning_rate: float = 0.01
    batch_size: int = 20
    max_epochs: int = 1000
    patience: int = 50
    validation_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if isinstance(self.activation, (list, tuple)):
            self.activation = tuple(self.activation)
            if len(self.activation) != len(self.hidden):
                raise ConfigError("one activation per hidden layer is required")
        for a in self.hidden_activations + (self.output_activation,):
            if a not in ACTIVATIONS:
                raise ConfigError(f"unknown activation {a!r}")
        if any(h < 1 for h in self.hidden):
            raise ConfigError("hidden widths must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ConfigError("validation_fraction must lie in (0, 1)")
        if self.batch_size < 1 or self.max_epochs < 0 or self.patience < 1:
            raise ConfigError("batch_size and patience must be positive, max_epochs nonnegative")
        if self.learning_rate <= 0 or self.l1 < 0 or self.l2 < 0:
            raise ConfigError("learning_rate must be positive and penalties nonnegative")

    @property
    def hidden_activations(self):
        if isinstance(self.activation, tuple):
            return self.activation
        return (self.activation,) * len(self.hidden)

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        if isinstance(self.activation, tuple):
            d["activation"] = list(self.activation)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown network config keys: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **kw):
        d = self.to_dict()
        d.update(kw)
        return type(self).from_dict(d)


class Network:
    """Weights and biases of a dense network plus its forward/backward pass."""

    def __init__(self, widths, activations, leaky_alpha=0.3, seed=0):
        if len(activations) != len(widths) - 1:
            raise ConfigError("need one activation per layer")
        self.widths = tuple(int(w) for w in widths)
        self.activations = tuple(activations)
        self.leaky_alpha = leaky_alpha
        rng = np.random.default_rng(seed)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(self.widths[:-1], self.widths[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))  # Glorot uniform
            self.weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    @property
    def params(self):
        return self.weights + self.biases

    def get_state(self):
        return [w.copy() for w in self.weights], [b.copy() for b in self.biases]

    def set_state(self, state):
        ws, bs = state
        self.weights = [w.copy() for w in ws]
        self.biases = [b.copy() for b in bs]

    def forward(self, x, dropout=0.0, rng=None):
        """Return the output and, for training, the cache needed by backward."""
        a = np.asarray(x, dtype=float)
        cache = []
        last = len(self.weights) - 1
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w + b
            out = activate(self.activations[l], z, self.leaky_alpha)
            mask = None
            if dropout > 0.0 and l < last and rng is not None:
                mask = (rng.random(out.shape) >= dropout) / (1.0 - dropout)
                out = out * mask
            cache.append((a, z, out, mask))
            a = out
        return a, cache

    def predict(self, x):
        return self.forward(x)[0]

    def backward(self, cache, grad_out):
        """Gradients of a loss w.r.t. weights and biases given dloss/doutput."""
        g = grad_out
        gws = [None] * len(self.weights)
        gbs = [None] * len(self.weights)
        for l in range(len(self.weights) - 1, -1, -1):
            a_in, z, out, mask = cache[l]
            if mask is not None:
                g = g * mask
                out = out / np.where(mask == 0, 1.0, mask)
            d = activation_grad(self.activations[l], z, out, self.leaky_alpha)
            dz = g if d is None else g * d
            gws[l] = a_in.T @ dz
            gbs[l] = dz.sum(axis=0)
            if l > 0:
                g = dz @ self.weights[l].T
        return gws, gbs

    def penalty(self, l1=0.0, l2=0.0):
        total = 0.0
        for w in self.weights:
            if l1:
                total += l1 * np.abs(w).sum()
            if l2:
                total += l2 * (w * w).sum()
        return total

    def penalty_grad(self, l1=0.0, l2=0.0):
        # subgradient of |w| at 0 is taken as 0 (np.sign(0) == 0)
        return [l1 * np.sign(w) + 2.0 * l2 * w for w in self.weights]

    def to_dict(self):
        return {
            "widths": list(self.widths),
            "activations": list(self.activations),
            "leaky_alpha": self.leaky_alpha,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d):
        net = cls(d["widths"], d["activations"], d.get("leaky_alpha", 0.3))
        net.weights = [np.asarray(w, dtype=float).reshape(net.widths[i], net.widths[i + 1])
                       for i, w in enumerate(d["weights"])]
        net.biases = [np.asarray(b, dtype=float) for b in d["biases"]]
        return net


def build_network(n_inputs, n_outputs, cfg: NetworkConfig, output_activation=None):
    widths = (n_inputs,) + cfg.hidden + (n_outputs,)
    acts = cfg.hidden_activations + (output_activation or cfg.output_activation,)
    return Network(widths, acts, cfg.leaky_alpha, seed=cfg.seed)


# -- losses -------------------------------------------------------------------
# Each loss takes the network output (n, k) and a tuple of per-row target
# arrays and returns (mean loss, dloss/doutput).


def mse_loss(out, target):
    (y,) = target
    r = out[:, 0] - y
    n = len(y)
    return float(np.mean(r * r)), (2.0 * r / n)[:, None]


def bce_logit_loss(out, target):
    """Binary cross-entropy on logits."""
    (y,) = target
    z = out[:, 0]
    # log(1 + exp(-|z|)) form avoids overflow
    loss = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    n = len(y)
    return float(np.mean(loss)), ((_sigmoid(z) - y) / n)[:, None]


def cox_partial_loss(out, target):
    """Negative Breslow log partial likelihood per event, and its gradient."""
    time, event = target
    eta = out[:, 0]
    n_ev = event.sum()
    if n_ev == 0:
        return 0.0, np.zeros_like(out)
    order = np.argsort(time, kind="stable")
    t = time[order]
    e = eta[order]
    d = event[order]
    first = np.searchsorted(t, t, side="left")
    last = np.searchsorted(t, t, side="right") - 1
    # log sum_{j: t_j >= t_i} exp(eta_j)
    rev = np.logaddexp.accumulate(e[::-1])[::-1]
    log_risk = rev[first]
    loss = -np.sum(d * (e - log_risk)) / n_ev
    # sum over events i with t_i <= t_k of 1/S_i, in log space
    terms = np.where(d > 0, -log_risk, -np.inf)
    cum = np.logaddexp.accumulate(terms)[last]
    g_sorted = (-d + np.exp(e + cum)) / n_ev
    grad = np.empty_like(eta)
    grad[order] = g_sorted
    return float(loss), grad[:, None]


def log_softmax(z):
    m = z.max(axis=1, keepdims=True)
    zs = z - m
    return zs - np.log(np.exp(zs).sum(axis=1, keepdims=True))


def masked_softmax_loss(out, target):
    """-log of the softmax mass on each row's admissible outcome set.

    ``mask[i]`` flags the output cells consistent with observation i: one
    cell for an observed event, several for a censored one.
    """
    (mask,) = target
    logp = log_softmax(out)
    p = np.exp(logp)
    masked = np.where(mask, logp, -np.inf)
    m = masked.max(axis=1, keepdims=True)
    log_set = (m + np.log(np.exp(masked - m).sum(axis=1, keepdims=True)))[:, 0]
    n = out.shape[0]
    grad = (p - mask * np.exp(logp - log_set[:, None])) / n
    return float(-np.mean(log_set)), grad


LOSSES = {
    "mse": mse_loss,
    "bce": bce_logit_loss,
    "cox": cox_partial_loss,
    "masked_softmax": masked_softmax_loss,
}


def backprop_gradient(net: Network, x, target, loss="mse", l1=0.0, l2=0.0):
    """Exact gradient of ``loss + penalty`` for every weight and bias.

    Returns ``(value, weight_grads, bias_grads)``.
    """
    loss_fn = LOSSES[loss] if isinstance(loss, str) else loss
    out, cache = net.forward(x)
    value, g = loss_fn(out, target)
    gws, gbs = net.backward(cache, g)
    if l1 or l2:
        gws = [gw + gp for gw, gp in zip(gws, net.penalty_grad(l1, l2))]
    return value + net.penalty(l1, l2), gws, gbs


class Adam:
    def __init__(self, params, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        lr_t = self.lr * np.sqrt(1 - b2 ** self.t) / (1 - b1 ** self.t)
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= lr_t * m / (np.sqrt(v) + self.eps)


@dataclass
class TrainingHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = float("inf")
    stopped_early: bool = False

    @property
    def epochs(self):
        return len(self.val_loss)


def _take(target, rows):
    return tuple(t[rows] for t in target)


def train_network(net: Network, x, target, loss, cfg: NetworkConfig, rng=None,
                  min_batch=1) -> TrainingHistory:
    """Mini-batch Adam with a held-out validation split and early stopping.

    Training stops after ``cfg.patience`` epochs without a strict
    improvement of the validation loss; the best-validation weights are
    restored.  ``min_batch`` lets losses that need several rows per batch
    (partial likelihood) merge a short trailing batch into its predecessor.
    """
    loss_fn = LOSSES[loss] if isinstance(loss, str) else loss
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    perm = rng.permutation(n)
    n_val = max(1, int(round(n * cfg.validation_fraction)))
    if n - n_val < 1:
        n_val = n - 1
    val_rows, train_rows = perm[:n_val], perm[n_val:]
    x_val, t_val = x[val_rows], _take(target, val_rows)
    x_tr, t_tr = x[train_rows], _take(target, train_rows)
    n_tr = len(train_rows)

    hist = TrainingHistory()
    if cfg.max_epochs == 0:
        return hist
    opt = Adam(net.params, lr=cfg.learning_rate)
    best = net.get_state()
    hist.best_val_loss, _ = loss_fn(net.predict(x_val), t_val)
    hist.best_epoch = 0
    wait = 0
    bs = cfg.batch_size
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n_tr)
        starts = list(range(0, n_tr, bs))
        if len(starts) > 1 and n_tr - starts[-1] < min_batch:
            starts.pop()
        ends = starts[1:] + [n_tr]
        total = 0.0
        for s, e in zip(starts, ends):
            rows = order[s:e]
            out, cache = net.forward(x_tr[rows], cfg.dropout, rng)
            value, g = loss_fn(out, _take(t_tr, rows))
            if not np.isfinite(value):
                raise NonFiniteLoss(epoch)
            gws, gbs = net.backward(cache, g)
            if cfg.l1 or cfg.l2:
                gws = [gw + gp for gw, gp in zip(gws, net.penalty_grad(cfg.l1, cfg.l2))]
            opt.step(net.params, gws + gbs)
            total += value * (e - s)
        val, _ = loss_fn(net.predict(x_val), t_val)
        if not np.isfinite(val):
            raise NonFiniteLoss(epoch)
        hist.train_loss.append(total / n_tr)
        hist.val_loss.append(val)
        if val < hist.best_val_loss:
            hist.best_val_loss = val
            hist.best_epoch = epoch
            best = net.get_state()
            wait = 0
        else:
            wait += 1
            if wait >= cfg.patience:
                hist.stopped_early = True
                break
    net.set_state(best)
    return hist
