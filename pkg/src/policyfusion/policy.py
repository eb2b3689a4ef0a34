"""Tabular-softmax and small-MLP function approximators with manual gradients.

One flat parameter vector per network; the same machinery backs the softmax
policy head (n_out = |A|) and the scalar value head (n_out = 1).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EncodingMismatch
from .fusion import ActionDistribution

TABULAR = "tabular"
MLP = "mlp"


def make_descriptor(kind, n_actions, n_states=None, input_dim=None, hidden=64,
                    env_kind=None, known_flags=()):
    """Architecture descriptor; known_flags records the observation vocabulary
    the network was trained on."""
    d = {"kind": kind, "n_actions": int(n_actions),
         "env_kind": env_kind, "known_flags": sorted(known_flags)}
    if kind == TABULAR:
        d["n_states"] = int(n_states)
    elif kind == MLP:
        d["input_dim"] = int(input_dim)
        d["hidden"] = int(hidden)
    else:
        raise ValueError(kind)
    return d


def n_params(desc, n_out) -> int:
    if desc["kind"] == TABULAR:
        return desc["n_states"] * n_out
    d, h = desc["input_dim"], desc["hidden"]
    return d * h + h + h * n_out + n_out


def init_theta(desc, n_out, rng, scale=0.1) -> np.ndarray:
    if desc["kind"] == TABULAR:
        return np.zeros(n_params(desc, n_out))
    d, h = desc["input_dim"], desc["hidden"]
    w1 = rng.normal(0.0, scale / np.sqrt(d), size=d * h)
    w2 = rng.normal(0.0, scale / np.sqrt(h), size=h * n_out)
    return np.concatenate([w1, np.zeros(h), w2, np.zeros(n_out)])


def _split_mlp(desc, theta, n_out):
    d, h = desc["input_dim"], desc["hidden"]
    i = 0
    w1 = theta[i:i + d * h].reshape(d, h); i += d * h
    b1 = theta[i:i + h]; i += h
    w2 = theta[i:i + h * n_out].reshape(h, n_out); i += h * n_out
    b2 = theta[i:i + n_out]
    return w1, b1, w2, b2


def net_forward(desc, theta, inputs, n_out):
    """Batch forward pass.

    Tabular: `inputs` is an int array of state indices. MLP: a (B, d) float
    matrix. Returns (out (B, n_out), cache for backward).
    """
    if desc["kind"] == TABULAR:
        idx = np.asarray(inputs, dtype=np.intp)
        table = theta.reshape(desc["n_states"], n_out)
        return table[idx], idx
    x = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    if x.shape[1] != desc["input_dim"]:
        raise EncodingMismatch(
            f"feature dim {x.shape[1]} != descriptor {desc['input_dim']}")
    w1, b1, w2, b2 = _split_mlp(desc, theta, n_out)
    h = np.tanh(x @ w1 + b1)
    return h @ w2 + b2, (x, h)


def net_backward(desc, theta, cache, dout, n_out) -> np.ndarray:
    """Gradient of sum(dout * out) with respect to the flat parameters."""
    if desc["kind"] == TABULAR:
        idx = cache
        grad = np.zeros((desc["n_states"], n_out))
        np.add.at(grad, idx, dout)
        return grad.ravel()
    x, h = cache
    _, _, w2, _ = _split_mlp(desc, theta, n_out)
    dw2 = h.T @ dout
    db2 = dout.sum(axis=0)
    dh = (dout @ w2.T) * (1.0 - h * h)
    dw1 = x.T @ dh
    db1 = dh.sum(axis=0)
    return np.concatenate([dw1.ravel(), db1, dw2.ravel(), db2])


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class PolicyParams:
    descriptor: dict
    theta: np.ndarray

    @property
    def n_actions(self) -> int:
        return self.descriptor["n_actions"]

    def copy(self) -> "PolicyParams":
        return PolicyParams(dict(self.descriptor), self.theta.copy())


@dataclass
class ValueParams:
    descriptor: dict
    theta: np.ndarray

    def copy(self) -> "ValueParams":
        return ValueParams(dict(self.descriptor), self.theta.copy())


def new_policy(desc, rng) -> PolicyParams:
    return PolicyParams(desc, init_theta(desc, desc["n_actions"], rng))


def new_value(desc, rng) -> ValueParams:
    return ValueParams(desc, init_theta(desc, 1, rng))


def _encode_one(params, obs):
    if params.descriptor["kind"] == TABULAR:
        if obs.n_states != params.descriptor["n_states"]:
            raise EncodingMismatch(
                f"{obs.n_states} states vs table of {params.descriptor['n_states']}")
        return np.array([obs.state_index])
    return obs.features[None, :]

def policy_logits(params: PolicyParams, inputs) -> np.ndarray:
    out, _ = net_forward(params.descriptor, params.theta, inputs,
                         params.n_actions)
    return out


def policy_forward(params: PolicyParams, obs) -> ActionDistribution:
    """Softmax action distribution at one observation."""
    logits = policy_logits(params, _encode_one(params, obs))
    return ActionDistribution(softmax(logits)[0])


def value_forward(vparams: ValueParams, inputs) -> np.ndarray:
    out, _ = net_forward(vparams.descriptor, vparams.theta, inputs, 1)
    return out[:, 0]


def policy_handle(params: PolicyParams, known_flags=None):
    """Wrap trained parameters as an observation -> distribution callable.

    When `known_flags` is given, observations are masked down to that
    vocabulary first (the adapter for policies trained before a design change).
    """
    from .gridworld.observe import mask_observation

    if known_flags is None:
        known_flags = frozenset(params.descriptor.get("known_flags", ()))

    def handle(obs):
        if obs.known_flags != known_flags:
            obs = mask_observation(obs, known_flags)
        return policy_forward(params, obs)
    return handle
