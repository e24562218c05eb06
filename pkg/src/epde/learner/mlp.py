"""Fully connected networks with hand-written backpropagation and Adam."""
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from ..tensor import rng_for


class TrainingError(RuntimeError):
    def __init__(self, msg, epoch=None):
        super().__init__(msg)
        self.epoch = epoch


def sigmoid(z):
    # split by sign so large |z| never overflows exp
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def swish(z):
    return z * sigmoid(z)


def _act(name, z):
    """Activation value and derivative."""
    if name == "swish":
        s = sigmoid(z)
        a = z * s
        return a, s + a * (1.0 - s)
    if name == "tanh":
        a = np.tanh(z)
        return a, 1.0 - a * a
    raise ValueError(f"unknown activation {name!r}")


def param_count(dims):
    return int(sum(dims[i] * dims[i + 1] + dims[i + 1] for i in range(len(dims) - 1)))


@dataclass
class MlpModel:
    """Affine layers with an activation after every hidden layer, linear output.

    Inputs are standardized with the stored ``x_mean``/``x_std`` before the
    first layer.  ``weights[l]`` has shape (dims[l], dims[l+1]).
    """

    dims: list
    activation: str = "swish"
    weights: list = None
    biases: list = None
    x_mean: np.ndarray = None
    x_std: np.ndarray = None
    seed: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.dims = [int(d) for d in self.dims]
        if len(self.dims) < 2 or min(self.dims) < 1:
            raise ValueError("dims need at least an input and an output size")
        if self.weights is None:
            rng = rng_for(self.seed)
            self.weights, self.biases = [], []
            for a, b in zip(self.dims[:-1], self.dims[1:]):
                bound = np.sqrt(1.0 / a)
                self.weights.append(rng.uniform(-bound, bound, (a, b)))
                self.biases.append(rng.uniform(-bound, bound, b))
        if self.x_mean is None:
            self.x_mean = np.zeros(self.dims[0])
        if self.x_std is None:
            self.x_std = np.ones(self.dims[0])
        _act(self.activation, np.zeros(1))

    @property
    def param_count(self):
        return param_count(self.dims)

    def set_normalization(self, X):
        X = np.asarray(X, dtype=np.float64)
        self.x_mean = X.mean(axis=0)
        sd = X.std(axis=0)
        self.x_std = np.where(sd > 0, sd, 1.0)

    def _prep(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[-1] != self.dims[0]:
            raise ValueError(f"expected {self.dims[0]} input features, got {X.shape[-1]}")
        return (X - self.x_mean) / self.x_std

    def forward(self, X):
        h = self._prep(X)
        L = len(self.weights)
        for l in range(L):
            z = h @ self.weights[l] + self.biases[l]
            h = z if l == L - 1 else _act(self.activation, z)[0]
        return h[:, 0] if self.dims[-1] == 1 else h

    __call__ = forward

    def loss_grad(self, X, y):
        """Mean squared error and its gradients ``[(dW, db), ...]``."""
        h = self._prep(X)
        y = np.asarray(y, dtype=np.float64).reshape(h.shape[0], -1)
        L = len(self.weights)
        hs, ds = [h], []
        for l in range(L):
            z = h @ self.weights[l] + self.biases[l]
            if l == L - 1:
                h = z
            else:
                h, dz = _act(self.activation, z)
                ds.append(dz)
            hs.append(h)
        r = h - y
        loss = float(np.mean(r * r))
        g = 2.0 * r / r.size
        grads = [None] * L
        for l in range(L - 1, -1, -1):
            grads[l] = (hs[l].T @ g, g.sum(axis=0))
            if l:
                g = (g @ self.weights[l].T) * ds[l - 1]
        return loss, grads

    def get_params(self):
        return np.concatenate([np.concatenate([W.ravel(), b]) for W, b in zip(self.weights, self.biases)])

    def set_params(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        if theta.size != self.param_count:
            raise ValueError("parameter vector has the wrong length")
        k = 0
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[l] = theta[k:k + W.size].reshape(W.shape).copy()
            k += W.size
            self.biases[l] = theta[k:k + b.size].copy()
            k += b.size

    @staticmethod
    def flat_grad(grads):
        return np.concatenate([np.concatenate([dW.ravel(), db]) for dW, db in grads])

    # -- serialization ----------------------------------------------------

    def header(self):
        return {
            "dims": self.dims,
            "activation": self.activation,
            "x_mean": self.x_mean.tolist(),
            "x_std": self.x_std.tolist(),
            "seed": int(self.seed),
            "param_count": self.param_count,
            "extra": self.extra,
        }

    def save(self, path):
        """JSON header line, then the little-endian f64 parameter payload."""
        head = json.dumps(self.header(), sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(struct.pack("<Q", len(head)))
            fh.write(head)
            fh.write(self.get_params().astype("<f8").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            raw = fh.read()
        if len(raw) < 8:
            raise ValueError("model file truncated")
        (n,) = struct.unpack("<Q", raw[:8])
        head = json.loads(raw[8:8 + n].decode())
        payload = np.frombuffer(raw[8 + n:], dtype="<f8")
        m = cls(head["dims"], head["activation"], seed=head["seed"], extra=head.get("extra", {}),
                x_mean=np.asarray(head["x_mean"]), x_std=np.asarray(head["x_std"]))
        m.set_params(payload.astype(np.float64))
        return m


def rhs_architecture():
    return [5] + [126] * 6 + [1]


def source_architecture():
    return [2] + [64] * 3 + [1]


def surrogate_architecture():
    return [4] + [12] * 8 + [1]


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 0.005
    plateau_patience: int = 75
    lr_factor: float = 0.5
    epochs: int = 1500
    batch: int = 128
    seed: int = 0
    n_val_snapshots: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    samples_per_epoch: int = None  # subsample each epoch (desk scale); None = all


@dataclass
class TrainResult:
    model: MlpModel
    loss: np.ndarray
    val_loss: np.ndarray
    lr: np.ndarray

    def loss_csv(self):
        rows = ["epoch,train_loss,val_loss,lr"]
        for i, (a, b, c) in enumerate(zip(self.loss, self.val_loss, self.lr)):
            rows.append(f"{i + 1},{a!r},{b!r},{c!r}")
        return "\n".join(rows) + "\n"


class Adam:
    def __init__(self, params, cfg):
        self.cfg = cfg
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads, lr):
        c = self.cfg
        self.t += 1
        b1t = 1.0 - c.beta1 ** self.t
        b2t = 1.0 - c.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            p -= lr * (m / b1t) / (np.sqrt(v / b2t) + c.adam_eps)


def fit(model, X, y, cfg=TrainConfig(), X_val=None, y_val=None, log=None):
    """Adam on mean squared error with plateau halving of the learning rate.

    The learning rate is halved whenever the epoch training loss has not
    improved for ``plateau_patience`` epochs.  Features are z-scored with the
    training statistics, stored in the model.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    n = X.shape[0]
    if n < 1:
        raise TrainingError("no training samples")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise TrainingError("training data contain non-finite values", epoch=0)
    model.set_normalization(X)
    rng = rng_for(cfg.seed)
    params = [p for W, b in zip(model.weights, model.biases) for p in (W, b)]
    opt = Adam(params, cfg)
    lr = cfg.lr0
    best, wait = np.inf, 0
    hist, vhist, lhist = [], [], []
    per_epoch = n if cfg.samples_per_epoch is None else min(n, cfg.samples_per_epoch)
    for epoch in range(1, cfg.epochs + 1):
        idx = rng.permutation(n)[:per_epoch]
        tot = 0.0
        for s in range(0, per_epoch, cfg.batch):
            b = idx[s:s + cfg.batch]
            loss, grads = model.loss_grad(X[b], y[b])
            if not np.isfinite(loss):
                raise TrainingError(f"loss became {loss} at epoch {epoch}", epoch=epoch)
            opt.step(params, [g for pair in grads for g in pair], lr)
            tot += loss * b.size
        ep_loss = tot / per_epoch
        hist.append(ep_loss)
        lhist.append(lr)
        if X_val is not None and len(X_val):
            r = model.forward(X_val) - np.asarray(y_val).reshape(-1)
            vhist.append(float(np.mean(r * r)))
        else:
            vhist.append(np.nan)
        if ep_loss < best:
            best, wait = ep_loss, 0
        else:
            wait += 1
            if wait >= cfg.plateau_patience:
                lr *= cfg.lr_factor
                wait = 0
        if log is not None and (epoch % 100 == 0 or epoch == cfg.epochs):
            log(f"epoch {epoch}: loss {ep_loss:.4e} val {vhist[-1]:.4e} lr {lr:.2e}")
    return TrainResult(model, np.asarray(hist), np.asarray(vhist), np.asarray(lhist))


def train_surrogate(inputs, targets, cfg=TrainConfig(), seed=None):
    """Regress intensity on (phi_1, phi_2, psi_1, omega) with the 4-12x8-1 tanh net."""
    X = np.asarray(inputs, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != 4:
        raise ValueError("surrogate inputs must be (n, 4)")
    if X.shape[0] < 1000:
        raise ValueError("need at least 1000 voxels")
    m = MlpModel(surrogate_architecture(), "tanh", seed=cfg.seed if seed is None else seed)
    return fit(m, X, targets, cfg)
