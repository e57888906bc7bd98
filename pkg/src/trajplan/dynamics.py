"""Differentiable dynamics and reward models.

Two analytic environments (a 2D goal-seeking world with a repulsive
circular barrier, and cartpole swingup) plus a small deterministic MLP
dynamics model trained on random-rollout transitions.

Every dynamics model exposes

    step(s, a) -> s_next
    backward(s, a, grad_next) -> (grad_s, grad_a)

where backward computes the vector-Jacobian products of step. Reward
models expose reward(s_next, a) and backward(s_next, a). step and reward
accept a single sample or a batch stacked along a leading axis; backward
operates on single samples. All models are pure functions of their inputs
and safe to call concurrently.
"""

from __future__ import annotations

import json
import math
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import ActionBounds, Array

STD_FLOOR = 1e-8


class DynamicsModel:
    """Interface: differentiable dynamics f(s, a) -> s'."""

    d_s: int
    d_a: int

    def step(self, s: Array, a: Array) -> Array:
        raise NotImplementedError

    def backward(self, s: Array, a: Array, grad_next: Array) -> tuple[Array, Array]:
        """VJPs (df/ds)^T grad_next and (df/da)^T grad_next at (s, a)."""
        raise NotImplementedError


class RewardModel:
    """Interface: known reward r(s_next, a) with gradients."""

    def reward(self, s_next: Array, a: Array):
        raise NotImplementedError

    def backward(self, s_next: Array, a: Array) -> tuple[Array, Array]:
        raise NotImplementedError


class QuadraticGoalReward(RewardModel):
    """-(distance to goal)^2 - action_cost * |a|^2, maximal at the goal."""

    def __init__(self, goal, action_cost: float = 0.0):
        self.goal = np.asarray(goal, dtype=float)
        self.action_cost = float(action_cost)

    def reward(self, s_next, a):
        err = s_next - self.goal
        return -np.sum(err * err, axis=-1) - self.action_cost * np.sum(a * a, axis=-1)

    def backward(self, s_next, a):
        return -2.0 * (s_next - self.goal), -2.0 * self.action_cost * np.asarray(a, dtype=float)


# ---------------------------------------------------------------------------
# Barrier world


@dataclass(frozen=True)
class BarrierWorld:
    """2D velocity-controlled agent, repulsive circular barrier, quadratic goal reward.

    The barrier center sits strictly above the start-goal line so the path
    below it is shorter than the path above; the force is radial, fades to
    zero at the rim, and is smoothed near the center so gradients stay
    defined everywhere.
    """

    center: tuple[float, float] = (0.0, 0.15)
    radius: float = 0.4
    kappa: float = 8.0
    goal: tuple[float, float] = (1.0, 0.0)
    dt: float = 0.05
    start: tuple[float, float] = (-1.0, 0.0)
    action_limit: float = 0.5
    action_cost: float = 0.01
    smooth_eps: float = 1e-6

    def __post_init__(self):
        if not self.center[1] > 0.0:
            raise ValueError("barrier center must sit strictly above y = 0")
        if self.radius <= 0.0 or self.kappa <= 0.0 or self.dt <= 0.0:
            raise ValueError("radius, kappa and dt must be positive")
        if self.action_cost < 0.0:
            raise ValueError("action_cost must be nonnegative")

    def dynamics(self) -> "BarrierDynamics":
        return BarrierDynamics(self)

    def reward_model(self) -> QuadraticGoalReward:
        return QuadraticGoalReward(self.goal, self.action_cost)

    def bounds(self) -> ActionBounds:
        return ActionBounds.symmetric(self.action_limit, 2)

    def start_state(self) -> Array:
        return np.asarray(self.start, dtype=float)


class BarrierDynamics(DynamicsModel):
    """s' = s + a*dt + F_rep(s)*dt with a radial in-barrier repulsion force."""

    d_s = 2
    d_a = 2

    def __init__(self, world: BarrierWorld):
        self.world = world
        self._center = np.asarray(world.center, dtype=float)

    def _force(self, s):
        w = self.world
        u = s - self._center
        d = np.sqrt(np.sum(u * u, axis=-1, keepdims=True) + w.smooth_eps**2)
        coeff = np.where(d < w.radius, w.kappa * (w.radius - d) / d, 0.0)
        return coeff * u

    def step(self, s, a):
        s = np.asarray(s, dtype=float)
        return s + self.world.dt * (np.asarray(a, dtype=float) + self._force(s))

    def backward(self, s, a, grad_next):
        w = self.world
        s = np.asarray(s, dtype=float)
        grad_next = np.asarray(grad_next, dtype=float)
        u = s - self._center
        d = math.sqrt(float(u @ u) + w.smooth_eps**2)
        grad_s = grad_next.copy()
        if d < w.radius:
            # dF/ds = c*I - (kappa*r/d^3) u u^T with c = kappa*(r - d)/d;
            # symmetric, so the VJP is a plain matrix-vector product.
            c = w.kappa * (w.radius - d) / d
            jac_f = c * np.eye(2) - (w.kappa * w.radius / d**3) * np.outer(u, u)
            grad_s = grad_s + w.dt * (jac_f @ grad_next)
        grad_a = w.dt * grad_next
        return grad_s, grad_a


# ---------------------------------------------------------------------------
# Cartpole swingup


@dataclass(frozen=True)
class CartpoleWorld:
    """Cart-pole with the pole starting straight down; reward favors upright.

    State is (x, x_dot, theta, theta_dot) with theta = 0 upright and left
    unwrapped so the dynamics are smooth. One explicit-Euler step of the
    standard equations of motion per step; the action scales to a
    horizontal force on the cart.
    """

    masscart: float = 1.0
    masspole: float = 0.1
    half_length: float = 0.5
    gravity: float = 9.8
    dt: float = 0.05
    force_scale: float = 10.0
    x_cost: float = 0.05
    action_cost: float = 0.01
    action_limit: float = 1.0
    start: tuple[float, float, float, float] = (0.0, 0.0, math.pi, 0.0)

    def dynamics(self) -> "CartpoleDynamics":
        return CartpoleDynamics(self)

    def reward_model(self) -> "CartpoleReward":
        return CartpoleReward(self)

    def bounds(self) -> ActionBounds:
        return ActionBounds.symmetric(self.action_limit, 1)

    def start_state(self) -> Array:
        return np.asarray(self.start, dtype=float)


class CartpoleDynamics(DynamicsModel):
    d_s = 4
    d_a = 1

    def __init__(self, world: CartpoleWorld):
        self.world = world

    def _accelerations(self, theta, omega, force):
        w = self.world
        sin = np.sin(theta)
        cos = np.cos(theta)
        total_mass = w.masscart + w.masspole
        pole_ml = w.masspole * w.half_length
        temp = (force + pole_ml * omega**2 * sin) / total_mass
        denom = w.half_length * (4.0 / 3.0 - w.masspole * cos**2 / total_mass)
        theta_acc = (w.gravity * sin - cos * temp) / denom
        x_acc = temp - pole_ml * theta_acc * cos / total_mass
        return x_acc, theta_acc

    def step(self, s, a):
        w = self.world
        s = np.asarray(s, dtype=float)
        force = w.force_scale * np.asarray(a, dtype=float)[..., 0]
        x, v, theta, omega = (s[..., i] for i in range(4))
        x_acc, theta_acc = self._accelerations(theta, omega, force)
        return np.stack(
            [x + w.dt * v, v + w.dt * x_acc, theta + w.dt * omega, omega + w.dt * theta_acc],
            axis=-1,
        )

    def backward(self, s, a, grad_next):
        w = self.world
        s = np.asarray(s, dtype=float)
        g = np.asarray(grad_next, dtype=float)
        theta, omega = float(s[2]), float(s[3])
        force = w.force_scale * float(np.asarray(a).reshape(-1)[0])

        sin, cos = math.sin(theta), math.cos(theta)
        total_mass = w.masscart + w.masspole
        pole_ml = w.masspole * w.half_length
        temp = (force + pole_ml * omega**2 * sin) / total_mass
        denom = w.half_length * (4.0 / 3.0 - w.masspole * cos**2 / total_mass)
        num = w.gravity * sin - cos * temp
        theta_acc = num / denom

        dtemp_dtheta = pole_ml * omega**2 * cos / total_mass
        dtemp_domega = 2.0 * pole_ml * omega * sin / total_mass
        dtemp_dforce = 1.0 / total_mass
        ddenom_dtheta = w.half_length * 2.0 * w.masspole * cos * sin / total_mass
        dnum_dtheta = w.gravity * cos + sin * temp - cos * dtemp_dtheta
        dtheta_acc_dtheta = (dnum_dtheta * denom - num * ddenom_dtheta) / denom**2
        dtheta_acc_domega = (-cos * dtemp_domega) / denom
        dtheta_acc_dforce = (-cos * dtemp_dforce) / denom
        ml_over_mass = pole_ml / total_mass
        dx_acc_dtheta = dtemp_dtheta - ml_over_mass * (dtheta_acc_dtheta * cos - theta_acc * sin)
        dx_acc_domega = dtemp_domega - ml_over_mass * dtheta_acc_domega * cos
        dx_acc_dforce = dtemp_dforce - ml_over_mass * dtheta_acc_dforce * cos

        dt = w.dt
        jac_s = np.array(
            [
                [1.0, dt, 0.0, 0.0],
                [0.0, 1.0, dt * dx_acc_dtheta, dt * dx_acc_domega],
                [0.0, 0.0, 1.0, dt],
                [0.0, 0.0, dt * dtheta_acc_dtheta, 1.0 + dt * dtheta_acc_domega],
            ]
        )
        jac_a = np.array([0.0, dt * dx_acc_dforce, 0.0, dt * dtheta_acc_dforce]) * w.force_scale
        return jac_s.T @ g, np.array([jac_a @ g])


class CartpoleReward(RewardModel):
    """cos(theta) - x_cost * x^2 - action_cost * a^2, maximal upright and centered."""

    def __init__(self, world: CartpoleWorld):
        self.world = world

    def reward(self, s_next, a):
        w = self.world
        a = np.asarray(a, dtype=float)[..., 0]
        return np.cos(s_next[..., 2]) - w.x_cost * s_next[..., 0] ** 2 - w.action_cost * a**2

    def backward(self, s_next, a):
        w = self.world
        grad_s = np.zeros(4)
        grad_s[0] = -2.0 * w.x_cost * float(s_next[0])
        grad_s[2] = -math.sin(float(s_next[2]))
        grad_a = np.array([-2.0 * w.action_cost * float(np.asarray(a).reshape(-1)[0])])
        return grad_s, grad_a


# ---------------------------------------------------------------------------
# MLP dynamics model


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def silu(x: Array) -> Array:
    """x * sigmoid(x)."""
    return x * _sigmoid(x)


def silu_prime(x: Array) -> Array:
    """sigmoid(x) * (1 + x * (1 - sigmoid(x)))."""
    sig = _sigmoid(x)
    return sig * (1.0 + x * (1.0 - sig))


_MLP_MAGIC = b"TJPM"
_MLP_VERSION = 1
_ACTIVATIONS = {"silu": 0, "linear": 1}


class MlpModel(DynamicsModel):
    """Residual MLP dynamics: step(s, a) = s + denormalize(net(normalize([s; a]))).

    The network predicts the state delta; inputs and targets are
    standardized with statistics stored on the model. ``activation`` is
    "silu" in production; "linear" exists as a test hook for checking the
    backward pass against plain matrix products.
    """

    def __init__(self, d_s, d_a, weights, in_mean=None, in_std=None,
                 out_mean=None, out_std=None, activation="silu"):
        if activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.d_s = int(d_s)
        self.d_a = int(d_a)
        self.weights = [(np.asarray(W, dtype=float), np.asarray(b, dtype=float))
                        for W, b in weights]
        d_in = self.d_s + self.d_a
        self.in_mean = np.zeros(d_in) if in_mean is None else np.asarray(in_mean, dtype=float)
        self.in_std = np.ones(d_in) if in_std is None else np.asarray(in_std, dtype=float)
        self.out_mean = np.zeros(self.d_s) if out_mean is None else np.asarray(out_mean, dtype=float)
        self.out_std = np.ones(self.d_s) if out_std is None else np.asarray(out_std, dtype=float)
        self.activation = activation

    @classmethod
    def initialize(cls, d_s, d_a, hidden=(200, 200, 200), rng=None, **stats):
        """Fresh model with scaled-Gaussian weights and zero biases."""
        rng = np.random.default_rng(rng)
        sizes = [d_s + d_a, *hidden, d_s]
        weights = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            W = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
            weights.append((W, np.zeros(fan_out)))
        return cls(d_s, d_a, weights, **stats)

    def _act(self, x):
        return silu(x) if self.activation == "silu" else x

    def _act_prime(self, x):
        return silu_prime(x) if self.activation == "silu" else np.ones_like(x)

    def _forward(self, z):
        """Forward pass on normalized input; returns (output, pre-activations, activations)."""
        pres, acts = [], [z]
        h = z
        for i, (W, b) in enumerate(self.weights):
            pre = h @ W + b
            if i < len(self.weights) - 1:
                pres.append(pre)
                h = self._act(pre)
                acts.append(h)
            else:
                h = pre
        return h, pres, acts

    def predict_delta(self, s, a):
        x = np.concatenate([np.asarray(s, dtype=float), np.asarray(a, dtype=float)], axis=-1)
        z = (x - self.in_mean) / self.in_std
        y, _, _ = self._forward(z)
        return self.out_mean + self.out_std * y

    def step(self, s, a):
        return np.asarray(s, dtype=float) + self.predict_delta(s, a)

    def backward(self, s, a, grad_next):
        g = np.asarray(grad_next, dtype=float)
        x = np.concatenate([np.asarray(s, dtype=float), np.asarray(a, dtype=float)], axis=-1)
        z = (x - self.in_mean) / self.in_std
        _, pres, _ = self._forward(z)
        gh = g * self.out_std
        for i in range(len(self.weights) - 1, -1, -1):
            W, _ = self.weights[i]
            if i < len(self.weights) - 1:
                gh = gh * self._act_prime(pres[i])
            gh = gh @ W.T
        gx = gh / self.in_std
        grad_s = g + gx[..., : self.d_s]
        grad_a = gx[..., self.d_s :]
        return grad_s, grad_a

    def _loss_and_grads(self, z, target):
        """Mean squared error on normalized targets plus parameter gradients."""
        pred, pres, acts = self._forward(z)
        err = pred - target
        loss = float(np.mean(err * err))
        gh = 2.0 * err / err.size
        grads = [None] * len(self.weights)
        for i in range(len(self.weights) - 1, -1, -1):
            W, _ = self.weights[i]
            grads[i] = (acts[i].T @ gh, gh.sum(axis=0))
            if i > 0:
                gh = (gh @ W.T) * self._act_prime(pres[i - 1])
        return loss, grads

    def training_mse(self, z, target):
        pred, _, _ = self._forward(z)
        err = pred - target
        return float(np.mean(err * err))

    # -- serialization ------------------------------------------------------

    def save_binary(self, path):
        """Write the model to a flat binary file (bit-exact round trip)."""
        with open(path, "wb") as f:
            f.write(_MLP_MAGIC)
            f.write(struct.pack("<IIIII", _MLP_VERSION, self.d_s, self.d_a,
                                _ACTIVATIONS[self.activation], len(self.weights)))
            for W, _ in self.weights:
                f.write(struct.pack("<II", W.shape[0], W.shape[1]))
            for arr in (self.in_mean, self.in_std, self.out_mean, self.out_std):
                f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
            for W, b in self.weights:
                f.write(np.ascontiguousarray(W, dtype="<f8").tobytes())
                f.write(np.ascontiguousarray(b, dtype="<f8").tobytes())

    @classmethod
    def load_binary(cls, path):
        with open(path, "rb") as f:
            data = f.read()
        if data[:4] != _MLP_MAGIC:
            raise ValueError(f"{path}: not a model file (bad magic)")
        version, d_s, d_a, act_code, n_layers = struct.unpack_from("<IIIII", data, 4)
        if version != _MLP_VERSION:
            raise ValueError(f"{path}: unsupported format version {version}")
        offset = 4 + 20
        shapes = []
        for _ in range(n_layers):
            shapes.append(struct.unpack_from("<II", data, offset))
            offset += 8

        def take(n):
            nonlocal offset
            arr = np.frombuffer(data, dtype="<f8", count=n, offset=offset).copy()
            offset += 8 * n
            return arr

        d_in = d_s + d_a
        in_mean, in_std = take(d_in), take(d_in)
        out_mean, out_std = take(d_s), take(d_s)
        weights = []
        for fan_in, fan_out in shapes:
            W = take(fan_in * fan_out).reshape(fan_in, fan_out)
            weights.append((W, take(fan_out)))
        activation = {v: k for k, v in _ACTIVATIONS.items()}[act_code]
        return cls(d_s, d_a, weights, in_mean, in_std, out_mean, out_std, activation)

    def to_json_dict(self):
        return {
            "format": "trajplan-mlp",
            "version": _MLP_VERSION,
            "d_s": self.d_s,
            "d_a": self.d_a,
            "activation": self.activation,
            "normalization": {
                "in_mean": self.in_mean.tolist(),
                "in_std": self.in_std.tolist(),
                "out_mean": self.out_mean.tolist(),
                "out_std": self.out_std.tolist(),
            },
            "layers": [{"w": W.tolist(), "b": b.tolist()} for W, b in self.weights],
        }

    @classmethod
    def from_json_dict(cls, d):
        if d.get("format") != "trajplan-mlp" or d.get("version") != _MLP_VERSION:
            raise ValueError("unsupported model JSON")
        norm = d["normalization"]
        return cls(d["d_s"], d["d_a"],
                   [(np.asarray(layer["w"]), np.asarray(layer["b"])) for layer in d["layers"]],
                   norm["in_mean"], norm["in_std"], norm["out_mean"], norm["out_std"],
                   d["activation"])

    def save_json(self, path):
        with open(path, "w") as f:
            json.dump(self.to_json_dict(), f)

    @classmethod
    def load_json(cls, path):
        with open(path) as f:
            return cls.from_json_dict(json.load(f))


def _normalization_stats(X, Y):
    in_mean, in_std = X.mean(axis=0), X.std(axis=0)
    out_mean, out_std = Y.mean(axis=0), Y.std(axis=0)
    degenerate = out_std < STD_FLOOR
    if np.any(degenerate):
        dims = np.nonzero(degenerate)[0].tolist()
        warnings.warn(f"zero variance in target dimensions {dims}; "
                      f"normalization std floored at {STD_FLOOR}")
    return (in_mean, np.maximum(in_std, STD_FLOOR),
            out_mean, np.maximum(out_std, STD_FLOOR))


def fit_mlp(transitions, epochs=50, batch_size=64, lr=1e-3,
            hidden=(200, 200, 200), rng=None):
    """Fit an MLP delta-dynamics model to (s, a, s') transitions by mini-batch SGD.

    Returns (model, history) where history[i] is the full-dataset MSE on
    normalized targets after i epochs (history[0] is the pre-training MSE).
    With epochs=0 the freshly initialized model is returned unchanged.
    """
    states, actions, next_states = (np.asarray(part, dtype=float) for part in transitions)
    if states.shape[0] == 0:
        raise ValueError("empty transition dataset")
    rng = np.random.default_rng(rng)
    X = np.hstack([states, actions])
    Y = next_states - states
    in_mean, in_std, out_mean, out_std = _normalization_stats(X, Y)
    model = MlpModel.initialize(states.shape[1], actions.shape[1], hidden, rng,
                                in_mean=in_mean, in_std=in_std,
                                out_mean=out_mean, out_std=out_std)
    Z = (X - in_mean) / in_std
    Yn = (Y - out_mean) / out_std
    history = [model.training_mse(Z, Yn)]
    n = Z.shape[0]
    for _ in range(epochs):
        order = rng.permutation(n)
        for lo in range(0, n, batch_size):
            idx = order[lo : lo + batch_size]
            _, grads = model._loss_and_grads(Z[idx], Yn[idx])
            model.weights = [(W - lr * gW, b - lr * gb)
                             for (W, b), (gW, gb) in zip(model.weights, grads)]
        history.append(model.training_mse(Z, Yn))
    return model, history


def collect_random_rollouts(dynamics, bounds, start_state, episodes, steps=200, rng=None):
    """Gather (s, a, s') transitions by applying uniform random actions."""
    rng = np.random.default_rng(rng)
    all_s, all_a, all_next = [], [], []
    for _ in range(episodes):
        s = np.asarray(start_state, dtype=float)
        actions = rng.uniform(bounds.low, bounds.high, size=(steps, bounds.d_a))
        for a in actions:
            s_next = dynamics.step(s, a)
            all_s.append(s)
            all_a.append(a)
            all_next.append(s_next)
            s = s_next
    return np.array(all_s), np.array(all_a), np.array(all_next)


# ---------------------------------------------------------------------------
# Environment bundles


@dataclass(frozen=True)
class Environment:
    """A named (dynamics, reward, bounds, start state) bundle."""

    name: str
    dynamics: DynamicsModel
    reward: RewardModel
    bounds: ActionBounds
    start_state: Array
    world: object = None


def make_barrier(**overrides) -> Environment:
    world = BarrierWorld(**overrides)
    return Environment("barrier", world.dynamics(), world.reward_model(),
                       world.bounds(), world.start_state(), world)


def make_cartpole(**overrides) -> Environment:
    world = CartpoleWorld(**overrides)
    return Environment("cartpole", world.dynamics(), world.reward_model(),
                       world.bounds(), world.start_state(), world)


ENVIRONMENTS = {"barrier": make_barrier, "cartpole": make_cartpole}


def make_environment(name: str, **overrides) -> Environment:
    try:
        factory = ENVIRONMENTS[name]
    except KeyError:
        valid = ", ".join(sorted(ENVIRONMENTS))
        raise ValueError(f"unknown environment {name!r}; valid environments: {valid}") from None
    return factory(**overrides)
