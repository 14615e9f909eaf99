"""Transformer encoder over tabular features, with hand-written backpropagation.

Each standardised feature value becomes a token ``z_i * w_i + b_i``.  Tokens
pass through pre-norm blocks (multi-head attention, then a GELU feed-forward
of width ``d_model``), a final layer norm and mean pooling; a linear head maps
the pooled vector to the (standardised) target.  There is no positional
encoding: the encoder is equivariant to token order up to the per-feature
tokenizer weights.  Everything runs in float64.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, DivergenceError, ShapeError
from .rng import Stream, derive_seed

LN_EPS = 1e-5
ADAM_B1 = 0.9
ADAM_B2 = 0.999
ADAM_EPS = 1e-8
_GELU_C = math.sqrt(2.0 / math.pi)


@dataclass(frozen=True)
class AttentionConfig:
    n_layers: int = 2
    n_heads: int = 4
    d_model: int = 128
    dropout: float = 0.1
    learning_rate: float = 0.001
    batch_size: int = 32
    max_epochs: int = 100
    early_stop_patience: int = 10
    val_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.n_layers < 0 or self.n_heads < 1 or self.d_model < 1:
            raise ConfigError("n_layers >= 0, n_heads >= 1 and d_model >= 1 required")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model {self.d_model} is not divisible by n_heads {self.n_heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.max_epochs < 0:
            raise ConfigError("learning_rate > 0, batch_size >= 1, max_epochs >= 0 required")
        if self.early_stop_patience < 1:
            raise ConfigError("early_stop_patience must be >= 1")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie in [0, 1)")

    @property
    def d_k(self) -> int:
        return self.d_model // self.n_heads


# ---------------------------------------------------------------------------
# attention primitive


def softmax(s, axis=-1):
    s = np.asarray(s, dtype=np.float64)
    e = np.exp(s - s.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def attention_weights(Q, K):
    Q = np.asarray(Q, dtype=np.float64)
    K = np.asarray(K, dtype=np.float64)
    if Q.shape[-1] != K.shape[-1]:
        raise ShapeError(f"query dim {Q.shape[-1]} != key dim {K.shape[-1]}")
    return softmax(Q @ np.swapaxes(K, -1, -2) / math.sqrt(Q.shape[-1]))


def scaled_dot_attention(Q, K, V):
    """``softmax(Q K^T / sqrt(d_k)) V`` over the last two axes."""
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    K = np.atleast_2d(np.asarray(K, dtype=np.float64))
    V = np.atleast_2d(np.asarray(V, dtype=np.float64))
    if K.shape[-2] != V.shape[-2]:
        raise ShapeError(f"{K.shape[-2]} keys but {V.shape[-2]} values")
    return attention_weights(Q, K) @ V


# ---------------------------------------------------------------------------
# building blocks


def _ln(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xh = xc * inv
    return xh * g + b, (xh, inv)


def _ln_back(dy, g, cache):
    xh, inv = cache
    axes = tuple(range(dy.ndim - 1))
    dg = (dy * xh).sum(axis=axes)
    db = dy.sum(axis=axes)
    dxh = dy * g
    dx = inv * (dxh - dxh.mean(axis=-1, keepdims=True) - xh * (dxh * xh).mean(axis=-1, keepdims=True))
    return dx, dg, db


def _gelu(u):
    t = np.tanh(_GELU_C * (u + 0.044715 * u ** 3))
    return 0.5 * u * (1.0 + t), t


def _gelu_grad(u, t):
    return 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * u * u)


def param_names(n_layers: int) -> list:
    names = ["tok_w", "tok_b"]
    for l in range(n_layers):
        names += [f"l{l}.{k}" for k in ("ln1_g", "ln1_b", "wq", "bq", "wk", "bk", "wv", "bv",
                                         "wo", "bo", "ln2_g", "ln2_b", "w1", "b1", "w2", "b2")]
    return names + ["lnf_g", "lnf_b", "head_w", "head_b"]


def init_params(n_features: int, cfg: AttentionConfig, stream: Stream) -> dict:
    D, T = cfg.d_model, n_features

    def normal(shape, std):
        return stream.normal(int(np.prod(shape))).reshape(shape) * std

    p = {"tok_w": normal((T, D), 1 / math.sqrt(D)), "tok_b": normal((T, D), 1 / math.sqrt(D))}
    for l in range(cfg.n_layers):
        pre = f"l{l}."
        p[pre + "ln1_g"] = np.ones(D)
        p[pre + "ln1_b"] = np.zeros(D)
        for w in ("wq", "wk", "wv", "wo"):
            p[pre + w] = normal((D, D), 1 / math.sqrt(D))
            p[pre + "b" + w[1]] = np.zeros(D)
        p[pre + "ln2_g"] = np.ones(D)
        p[pre + "ln2_b"] = np.zeros(D)
        p[pre + "w1"] = normal((D, D), 1 / math.sqrt(D))
        p[pre + "b1"] = np.zeros(D)
        p[pre + "w2"] = normal((D, D), 1 / math.sqrt(D))
        p[pre + "b2"] = np.zeros(D)
    p["lnf_g"] = np.ones(D)
    p["lnf_b"] = np.zeros(D)
    p["head_w"] = normal((D,), 1 / math.sqrt(D))
    p["head_b"] = np.zeros(1)
    return {k: p[k] for k in param_names(cfg.n_layers)}


def forward(p, Z, cfg: AttentionConfig, drop: Stream | None = None):
    """Return ``(prediction, representation, cache)`` for standardised inputs ``Z``.

    Dropout is applied (to attention and feed-forward outputs) only when a
    stream ``drop`` is given.
    """
    B, T = Z.shape
    D, H, dk = cfg.d_model, cfg.n_heads, cfg.d_k
    rate = cfg.dropout if drop is not None else 0.0
    X = Z[:, :, None] * p["tok_w"][None] + p["tok_b"][None]
    layers = []
    for l in range(cfg.n_layers):
        pre = f"l{l}."
        A, ln1 = _ln(X, p[pre + "ln1_g"], p[pre + "ln1_b"])
        A2 = A.reshape(B * T, D)

        def heads(w, b):
            return (A2 @ p[pre + w] + p[pre + b]).reshape(B, T, H, dk).transpose(0, 2, 1, 3)

        Q, Kh, V = heads("wq", "bq"), heads("wk", "bk"), heads("wv", "bv")
        P = softmax(Q @ Kh.transpose(0, 1, 3, 2) / math.sqrt(dk))
        O = (P @ V).transpose(0, 2, 1, 3).reshape(B * T, D)
        M = (O @ p[pre + "wo"] + p[pre + "bo"]).reshape(B, T, D)
        mask1 = None
        if rate > 0:
            mask1 = (drop.uniform(B * T * D).reshape(B, T, D) >= rate) / (1.0 - rate)
            M = M * mask1
        X1 = X + M
        C, ln2 = _ln(X1, p[pre + "ln2_g"], p[pre + "ln2_b"])
        C2 = C.reshape(B * T, D)
        U = C2 @ p[pre + "w1"] + p[pre + "b1"]
        Gl, tanh_u = _gelu(U)
        F = (Gl @ p[pre + "w2"] + p[pre + "b2"]).reshape(B, T, D)
        mask2 = None
        if rate > 0:
            mask2 = (drop.uniform(B * T * D).reshape(B, T, D) >= rate) / (1.0 - rate)
            F = F * mask2
        X = X1 + F
        layers.append((ln1, A2, Q, Kh, V, P, O, mask1, ln2, C2, U, Gl, tanh_u, mask2))
    Y, lnf = _ln(X, p["lnf_g"], p["lnf_b"])
    R = Y.mean(axis=1)
    pred = R @ p["head_w"] + p["head_b"][0]
    return pred, R, (Z, layers, lnf, R)


def backward(p, cache, dpred, cfg: AttentionConfig) -> dict:
    """Gradients of a scalar loss given ``dloss/dprediction``."""
    Z, layers, lnf, R = cache
    B, T = Z.shape
    D, H, dk = cfg.d_model, cfg.n_heads, cfg.d_k
    g = {"head_w": R.T @ dpred, "head_b": np.array([dpred.sum()])}
    dR = dpred[:, None] * p["head_w"][None, :]
    dY = np.broadcast_to(dR[:, None, :] / T, (B, T, D))
    dX, g["lnf_g"], g["lnf_b"] = _ln_back(dY, p["lnf_g"], lnf)
    for l in reversed(range(cfg.n_layers)):
        pre = f"l{l}."
        ln1, A2, Q, Kh, V, P, O, mask1, ln2, C2, U, Gl, tanh_u, mask2 = layers[l]
        dF = dX * mask2 if mask2 is not None else dX
        dF2 = dF.reshape(B * T, D)
        g[pre + "w2"] = Gl.T @ dF2
        g[pre + "b2"] = dF2.sum(axis=0)
        dU = (dF2 @ p[pre + "w2"].T) * _gelu_grad(U, tanh_u)
        g[pre + "w1"] = C2.T @ dU
        g[pre + "b1"] = dU.sum(axis=0)
        dC = (dU @ p[pre + "w1"].T).reshape(B, T, D)
        dX1_ln, g[pre + "ln2_g"], g[pre + "ln2_b"] = _ln_back(dC, p[pre + "ln2_g"], ln2)
        dX1 = dX + dX1_ln
        dM = dX1 * mask1 if mask1 is not None else dX1
        dM2 = dM.reshape(B * T, D)
        g[pre + "wo"] = O.T @ dM2
        g[pre + "bo"] = dM2.sum(axis=0)
        dO = (dM2 @ p[pre + "wo"].T).reshape(B, T, H, dk).transpose(0, 2, 1, 3)
        dP = dO @ V.transpose(0, 1, 3, 2)
        dV = P.transpose(0, 1, 3, 2) @ dO
        dS = P * (dP - (dP * P).sum(axis=-1, keepdims=True)) / math.sqrt(dk)
        dQ = dS @ Kh
        dK = dS.transpose(0, 1, 3, 2) @ Q
        dA2 = np.zeros((B * T, D))
        for name, dh in (("q", dQ), ("k", dK), ("v", dV)):
            d2 = dh.transpose(0, 2, 1, 3).reshape(B * T, D)
            g[pre + "w" + name] = A2.T @ d2
            g[pre + "b" + name] = d2.sum(axis=0)
            dA2 += d2 @ p[pre + "w" + name].T
        dXa, g[pre + "ln1_g"], g[pre + "ln1_b"] = _ln_back(dA2.reshape(B, T, D), p[pre + "ln1_g"], ln1)
        dX = dX1 + dXa
    g["tok_w"] = (dX * Z[:, :, None]).sum(axis=0)
    g["tok_b"] = dX.sum(axis=0)
    return {k: g[k] for k in param_names(cfg.n_layers)}


def mse_loss_and_grads(p, Z, yz, cfg: AttentionConfig, drop: Stream | None = None):
    pred, _, cache = forward(p, Z, cfg, drop)
    r = pred - yz
    loss = float(np.mean(r * r))
    return loss, backward(p, cache, 2.0 * r / len(yz), cfg)


# ---------------------------------------------------------------------------
# model


@dataclass(frozen=True)
class TrainingHistory:
    train_loss: tuple
    val_loss: tuple
    best_epoch: int
    best_val_loss: float
    stopped_early: bool


@dataclass(frozen=True)
class TransformerModel:
    config: AttentionConfig
    params: dict
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float
    y_std: float
    history: TrainingHistory | None = None

    @property
    def n_features(self) -> int:
        return self.x_mean.shape[0]

    def standardize(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ShapeError(f"expected {self.n_features} features, got shape {X.shape}")
        return (X - self.x_mean) / self.x_std

    def forward(self, X, train: bool = False, drop: Stream | None = None):
        """Representations and predictions (target units); dropout only when ``train``."""
        Z = self.standardize(X)
        pred, R, _ = forward(self.params, Z, self.config, drop if train else None)
        return R, pred * self.y_std + self.y_mean

    def predict(self, X) -> np.ndarray:
        return self.forward(X)[1]

    def to_dict(self) -> dict:
        def tagged(a):
            a = np.asarray(a, dtype=np.float64)
            return {"shape": list(a.shape), "data": [float(v) for v in a.ravel()]}

        out = {"type": "transformer", "config": asdict(self.config),
               "params": {k: tagged(v) for k, v in self.params.items()},
               "x_mean": tagged(self.x_mean), "x_std": tagged(self.x_std),
               "y_mean": float(self.y_mean), "y_std": float(self.y_std)}
        if self.history is not None:
            h = self.history
            out["history"] = {"train_loss": list(h.train_loss), "val_loss": list(h.val_loss),
                              "best_epoch": h.best_epoch, "best_val_loss": h.best_val_loss,
                              "stopped_early": h.stopped_early}
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "TransformerModel":
        def untag(t):
            return np.array(t["data"], dtype=np.float64).reshape(t["shape"])

        hist = None
        if "history" in d:
            h = d["history"]
            hist = TrainingHistory(tuple(h["train_loss"]), tuple(h["val_loss"]), int(h["best_epoch"]),
                                   float(h["best_val_loss"]), bool(h["stopped_early"]))
        return cls(AttentionConfig(**d["config"]), {k: untag(v) for k, v in d["params"].items()},
                   untag(d["x_mean"]), untag(d["x_std"]), float(d["y_mean"]), float(d["y_std"]), hist)


def encoder_forward(model: TransformerModel, x, mode: str = "eval", drop: Stream | None = None):
    """``(representation, prediction)`` for a single feature vector."""
    if mode not in ("train", "eval"):
        raise ValueError("mode must be 'train' or 'eval'")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError("encoder_forward takes one feature vector")
    if mode == "train" and drop is None:
        drop = Stream(derive_seed(model.config.seed, 3))
    R, pred = model.forward(x[None, :], train=mode == "train", drop=drop)
    return R[0], float(pred[0])


def encode(model: TransformerModel, X) -> np.ndarray:
    """Eval-mode representation matrix, one row per sample."""
    return model.forward(X)[0]


def _std(a, axis=0):
    s = np.std(a, axis=axis)
    return np.where(s > 0, s, 1.0)


def _adam_step(p, grads, m, v, t, lr):
    b1t = 1.0 - ADAM_B1 ** t
    b2t = 1.0 - ADAM_B2 ** t
    for k, gk in grads.items():
        m[k] = ADAM_B1 * m[k] + (1 - ADAM_B1) * gk
        v[k] = ADAM_B2 * v[k] + (1 - ADAM_B2) * gk * gk
        p[k] = p[k] - lr * (m[k] / b1t) / (np.sqrt(v[k] / b2t) + ADAM_EPS)


def eval_loss(p, Z, yz, cfg) -> float:
    pred, _, _ = forward(p, Z, cfg)
    r = pred - yz
    return float(np.mean(r * r))


def fit_transformer(X, y, cfg: AttentionConfig = AttentionConfig()) -> TransformerModel:
    """Train with Adam on MSE; keep the weights of the best validation epoch.

    A seeded ``val_fraction`` of the rows is held out for early stopping
    (patience ``early_stop_patience``); with no hold-out the training loss is
    monitored instead.  Inputs and target are standardised with statistics
    of the fitting rows.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ShapeError(f"X {X.shape} and y {y.shape} are not aligned")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ValueError("training data contains NaN or infinity")
    n, T = X.shape
    perm = Stream(derive_seed(cfg.seed, 0)).permutation(n)
    n_val = math.floor(cfg.val_fraction * n + 1e-9) if n >= 2 else 0
    n_val = min(n_val, n - 1)
    fit_rows = np.sort(perm[: n - n_val])
    val_rows = np.sort(perm[n - n_val:])
    x_mean = X[fit_rows].mean(axis=0)
    x_std = _std(X[fit_rows])
    y_mean = float(y[fit_rows].mean())
    y_std = float(_std(y[fit_rows][:, None])[0])
    Z = (X - x_mean) / x_std
    yz = (y - y_mean) / y_std
    Zf, yf = Z[fit_rows], yz[fit_rows]
    Zv, yv = (Z[val_rows], yz[val_rows]) if n_val > 0 else (Zf, yf)

    p = init_params(T, cfg, Stream(derive_seed(cfg.seed, 1)))
    m = {k: np.zeros_like(v) for k, v in p.items()}
    v = {k: np.zeros_like(a) for k, a in p.items()}
    best = {k: a.copy() for k, a in p.items()}
    best_loss = eval_loss(p, Zv, yv, cfg)
    best_epoch = 0
    train_hist, val_hist = [], []
    step = 0
    stale = 0
    stopped = False
    for epoch in range(1, cfg.max_epochs + 1):
        order = Stream(derive_seed(cfg.seed, 2, epoch)).permutation(len(fit_rows))
        drop = Stream(derive_seed(cfg.seed, 3, epoch)) if cfg.dropout > 0 else None
        total = 0.0
        for s in range(0, len(order), cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            loss, grads = mse_loss_and_grads(p, Zf[idx], yf[idx], cfg, drop)
            if not math.isfinite(loss):
                raise DivergenceError(epoch)
            step += 1
            _adam_step(p, grads, m, v, step, cfg.learning_rate)
            total += loss * len(idx)
        train_hist.append(total / len(order))
        vl = eval_loss(p, Zv, yv, cfg)
        if not math.isfinite(vl):
            raise DivergenceError(epoch)
        val_hist.append(vl)
        if vl < best_loss:
            best_loss, best_epoch, stale = vl, epoch, 0
            best = {k: a.copy() for k, a in p.items()}
        else:
            stale += 1
            if stale >= cfg.early_stop_patience:
                stopped = True
                break
    hist = TrainingHistory(tuple(train_hist), tuple(val_hist), best_epoch, best_loss, stopped)
    return TransformerModel(cfg, best, x_mean, x_std, y_mean, y_std, hist)


def validation_rows(n: int, cfg: AttentionConfig) -> np.ndarray:
    """Rows held out for early stopping by :func:`fit_transformer`."""
    perm = Stream(derive_seed(cfg.seed, 0)).permutation(n)
    n_val = min(math.floor(cfg.val_fraction * n + 1e-9), n - 1) if n >= 2 else 0
    return np.sort(perm[n - n_val:])
