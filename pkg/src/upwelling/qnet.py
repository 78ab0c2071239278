"""Dueling quantile network in plain numpy: forward/backward passes, the
quantile Huber loss, Adam, and checkpoint I/O.

Outputs are laid out as ``theta[batch, action, quantile]``.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

CHECKPOINT_FORMAT = "upwelling-qnet"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetworkLayout:
    input_dim: int = 6
    hidden: tuple[int, ...] = (64, 64)
    n_actions: int = 17
    n_quantiles: int = 200
    dueling: bool = True

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if min((self.input_dim, self.n_actions, self.n_quantiles) + self.hidden) < 1:
            raise ValueError("all layer sizes must be >= 1")

    def shapes(self) -> dict[str, tuple[int, ...]]:
        dims = (self.input_dim,) + self.hidden
        out: dict[str, tuple[int, ...]] = {}
        for k in range(len(self.hidden)):
            out[f"W{k}"] = (dims[k], dims[k + 1])
            out[f"b{k}"] = (dims[k + 1],)
        h = dims[-1]
        A, N = self.n_actions, self.n_quantiles
        if self.dueling:
            out["Wv"], out["bv"] = (h, N), (N,)
            out["Wa"], out["ba"] = (h, A * N), (A * N,)
        else:
            out["Wq"], out["bq"] = (h, A * N), (A * N,)
        return out


Params = dict  # name -> ndarray, in layout order


def init_network(layout: NetworkLayout, seed: int | np.random.Generator = 0) -> Params:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    params = {}
    for name, shape in layout.shapes().items():
        if name.startswith("W"):
            bound = 1.0 / np.sqrt(shape[0])
            params[name] = rng.uniform(-bound, bound, size=shape)
        else:
            params[name] = np.zeros(shape)
    return params


def forward(params: Params, x: np.ndarray, layout: NetworkLayout, cache: bool = False):
    """Quantile supports for every action. ``x`` is (6,) or (B, 6)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite network input")
    acts = [x]
    h = x
    for k in range(len(layout.hidden)):
        h = np.maximum(h @ params[f"W{k}"] + params[f"b{k}"], 0.0)
        acts.append(h)
    B, A, N = x.shape[0], layout.n_actions, layout.n_quantiles
    if layout.dueling:
        value = h @ params["Wv"] + params["bv"]
        adv = (h @ params["Wa"] + params["ba"]).reshape(B, A, N)
        theta = value[:, None, :] + adv - adv.mean(axis=1, keepdims=True)
    else:
        theta = (h @ params["Wq"] + params["bq"]).reshape(B, A, N)
    if single:
        theta = theta[0]
    return (theta, acts) if cache else theta


def value_stream(params: Params, x: np.ndarray, layout: NetworkLayout) -> np.ndarray:
    h = np.atleast_2d(np.asarray(x, dtype=float))
    for k in range(len(layout.hidden)):
        h = np.maximum(h @ params[f"W{k}"] + params[f"b{k}"], 0.0)
    return h @ params["Wv"] + params["bv"]


def backward(params: Params, acts: list, g_theta: np.ndarray, layout: NetworkLayout) -> Params:
    """Parameter gradients given activations cached by ``forward`` and the
    gradient of the objective with respect to ``theta`` (B, A, N)."""
    g_theta = np.asarray(g_theta, dtype=float)
    if g_theta.ndim == 2:
        g_theta = g_theta[None]
    B = g_theta.shape[0]
    h = acts[-1]
    grads: Params = {}
    if layout.dueling:
        g_value = g_theta.sum(axis=1)
        g_adv = (g_theta - g_theta.mean(axis=1, keepdims=True)).reshape(B, -1)
        grads["Wv"] = h.T @ g_value
        grads["bv"] = g_value.sum(axis=0)
        grads["Wa"] = h.T @ g_adv
        grads["ba"] = g_adv.sum(axis=0)
        g_h = g_value @ params["Wv"].T + g_adv @ params["Wa"].T
    else:
        g_q = g_theta.reshape(B, -1)
        grads["Wq"] = h.T @ g_q
        grads["bq"] = g_q.sum(axis=0)
        g_h = g_q @ params["Wq"].T
    for k in range(len(layout.hidden) - 1, -1, -1):
        g_pre = g_h * (acts[k + 1] > 0)
        grads[f"W{k}"] = acts[k].T @ g_pre
        grads[f"b{k}"] = g_pre.sum(axis=0)
        if k > 0:
            g_h = g_pre @ params[f"W{k}"].T
    return {name: grads[name] for name in params}


def q_values(theta: np.ndarray) -> np.ndarray:
    """Expected return per action: the uniform-weight mean of the quantiles."""
    return np.asarray(theta).mean(axis=-1)


def tau_midpoints(n: int) -> np.ndarray:
    if n < 1:
        raise ValueError("need at least one quantile")
    return (2.0 * np.arange(n) + 1.0) / (2.0 * n)


def _huber(u: np.ndarray, kappa: float) -> tuple[np.ndarray, np.ndarray]:
    """Huber function and derivative; with c = min(|u|, kappa) they are
    c * (|u| - c/2) and sign(u) * c."""
    a = np.abs(u)
    c = np.minimum(a, kappa)
    loss = c * (a - 0.5 * c)
    return loss, np.copysign(c, u)


def quantile_huber_loss(theta, targets, tau=None, kappa: float = 1.0):
    """Quantile Huber loss and its gradient with respect to ``theta``.

    ``theta`` is (N,) or (B, N), ``targets`` (N',) or (B, N'). Per item the
    loss sums over predicted quantiles and averages over target samples; a
    batch is averaged over items.
    """
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    theta = np.asarray(theta, dtype=float)
    targets = np.asarray(targets, dtype=float)
    single = theta.ndim == 1
    th = theta[None] if single else theta
    tg = targets[None] if targets.ndim == 1 else targets
    B, N = th.shape
    tau = tau_midpoints(N) if tau is None else np.asarray(tau, dtype=float)
    u = tg[:, None, :] - th[:, :, None]  # (B, N, N')
    # |tau - 1{u < 0}|
    weight = np.where(u < 0, (1.0 - tau)[None, :, None], tau[None, :, None])
    h, dh = _huber(u, kappa)
    dh *= weight
    h *= weight
    scale = 1.0 / (tg.shape[1] * B)
    loss = float(h.sum()) * scale
    grad = dh.sum(axis=2)
    grad *= -scale
    return loss, (grad[0] if single else grad)


def huber_loss(pred, targets, kappa: float = 1.0):
    """Mean Huber loss of scalar predictions and its gradient."""
    pred = np.asarray(pred, dtype=float)
    u = np.asarray(targets, dtype=float) - pred
    h, dh = _huber(u, kappa)
    return float(h.mean()), -dh / u.size


@dataclass
class Adam:
    lr: float = 0.00025
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params: Params, grads: Params) -> Params:
        """Bias-corrected Adam update, applied to ``params`` in place."""
        if grads.keys() != params.keys():
            raise ValueError("gradient names do not match parameters")
        for name, g in grads.items():
            if g.shape != params[name].shape:
                raise ValueError(f"shape mismatch for {name}: {g.shape} vs {params[name].shape}")
        self.step_count += 1
        c1 = 1.0 - self.beta1**self.step_count
        c2 = 1.0 - self.beta2**self.step_count
        for name, g in grads.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[name] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return params


def wasserstein_1(quantiles, samples) -> float:
    """1-Wasserstein distance between the uniform mixture of ``quantiles`` and
    the empirical distribution of ``samples``, by integrating the difference of
    their quantile functions over (0, 1)."""
    a = np.sort(np.asarray(quantiles, dtype=float).ravel())
    b = np.sort(np.asarray(samples, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise ValueError("need at least one quantile and one sample")
    grid = np.union1d(np.arange(a.size + 1) / a.size, np.arange(b.size + 1) / b.size)
    mid = 0.5 * (grid[1:] + grid[:-1])
    ia = np.minimum((mid * a.size).astype(int), a.size - 1)
    ib = np.minimum((mid * b.size).astype(int), b.size - 1)
    return float(np.sum(np.diff(grid) * np.abs(a[ia] - b[ib])))


# ------------------------------------------------------------------ checkpoints


def _hex(arr: np.ndarray) -> list[str]:
    return [float(v).hex() for v in arr.ravel()]


def _unhex(values, shape) -> np.ndarray:
    return np.array([float.fromhex(v) for v in values], dtype=float).reshape(shape)


def save_checkpoint(path, params: Params, layout: NetworkLayout, step: int = 0, extra: dict | None = None) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "layout": asdict(layout),
        "step": int(step),
        "params": {name: {"shape": list(p.shape), "data": _hex(p)} for name, p in params.items()},
        "extra": extra or {},
    }
    tmp = f"{os.fspath(path)}.part"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, separators=(",", ":"))
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[Params, NetworkLayout, int, dict]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: not a version-{CHECKPOINT_VERSION} {CHECKPOINT_FORMAT} checkpoint")
    lay = doc["layout"]
    layout = NetworkLayout(**{**lay, "hidden": tuple(lay["hidden"])})
    params = {name: _unhex(p["data"], tuple(p["shape"])) for name, p in doc["params"].items()}
    if {k: v.shape for k, v in params.items()} != layout.shapes():
        raise ValueError(f"{path}: tensor shapes disagree with layout")
    return params, layout, int(doc["step"]), doc.get("extra", {})


# -------------------------------------------------------------------- gradcheck


def gradient_check(seed: int = 0, cases: int = 100, n_quantiles: int = 8, hidden=(16, 16), n_actions: int = 4,
                   batch: int = 3, h: float = 1e-5, floor: float = 1e-6) -> float:
    """Largest relative error between analytic and central-difference
    gradients of the quantile loss on the taken actions, over random cases."""
    rng = np.random.default_rng(seed)
    layout = NetworkLayout(hidden=tuple(hidden), n_actions=n_actions, n_quantiles=n_quantiles)
    worst = 0.0
    for _ in range(cases):
        params = init_network(layout, rng)
        for name in params:
            if name.startswith("b"):
                params[name] = rng.normal(0.0, 0.1, size=params[name].shape)
        x = rng.normal(size=(batch, layout.input_dim))
        a = rng.integers(0, n_actions, size=batch)
        target = rng.normal(0.0, 1.0, size=(batch, n_quantiles))

        def objective():
            theta = forward(params, x, layout)
            return quantile_huber_loss(theta[np.arange(batch), a], target)[0]

        theta, acts = forward(params, x, layout, cache=True)
        _, g_sel = quantile_huber_loss(theta[np.arange(batch), a], target)
        g_theta = np.zeros_like(theta)
        g_theta[np.arange(batch), a] = g_sel
        grads = backward(params, acts, g_theta, layout)
        for name, p in params.items():
            flat = p.reshape(-1)
            numeric = np.empty_like(flat)
            for k in range(flat.size):
                old = flat[k]
                flat[k] = old + h
                up = objective()
                flat[k] = old - h
                down = objective()
                flat[k] = old
                numeric[k] = (up - down) / (2 * h)
            analytic = grads[name].reshape(-1)
            denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
            worst = max(worst, float(np.max(np.abs(analytic - numeric) / denom)))
    return worst
