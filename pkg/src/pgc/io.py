"""On-disk formats.

Model / attack container (JSON, UTF-8, one object, keys in this order)::

    format        "pgc-model" or "pgc-attack"
    version       integer, currently 1
    tool_version  package version that wrote the file
    config_hash   sha256 of the run config, or null
    head          "gaussian" | "diagonal" | "categorical"        (models)
    tag           "pgc" | "ipgc" | "discrete"                      (models)
    kind          attack kind                                      (attacks)
    action_dim, hidden_size, obs_dim                               (models)
    prev_action, shared                                            (models)
    observer, victim                                               (models; observer null when shared)
    head_config   head-specific settings (diag_floor, or levels/low/high)
    moments       [mean, std] of the categorical score, or null
    hyper         free-form hyperparameters                        (attacks)
    n_params      length of ``params``
    params        flat parameter vector in the network's declared layout order

Floats are written with ``repr`` precision, so a save/load round trip is
bit-exact.

Episode traces are JSON lines: a header object followed by one object per
step ``{"t", "positions", "goal", "obs", "actions", "reward", "attack_active"}``.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import CategoricalHead
from .predictor import GaussianHead, PredictorNet

MODEL_FORMAT = "pgc-model"
ATTACK_FORMAT = "pgc-attack"
TRACE_FORMAT = "pgc-trace"
VERSION = 1
TAGS = {"gaussian": "pgc", "diagonal": "ipgc", "categorical": "discrete"}


class FormatError(ValueError):
    pass


def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_jsonable)
    return hashlib.sha256(blob.encode()).hexdigest()


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, tuple):
        return list(x)
    raise TypeError(f"cannot serialize {type(x).__name__}")


def _floats(values) -> list:
    return [float(v) for v in np.asarray(values, dtype=float).ravel()]


def model_to_dict(net: PredictorNet, observer=None, victim=None, moments=None,
                  cfg_hash=None) -> dict:
    return {
        "format": MODEL_FORMAT,
        "version": VERSION,
        "tool_version": __version__,
        "config_hash": cfg_hash,
        "head": net.head.name,
        "tag": TAGS[net.head.name],
        "action_dim": net.action_dim,
        "hidden_size": net.hidden_size,
        "obs_dim": net.obs_dim,
        "prev_action": net.prev_action,
        "shared": net.shared,
        "observer": observer,
        "victim": victim,
        "head_config": net.head.to_json(),
        "moments": None if moments is None else [float(moments[0]), float(moments[1])],
        "n_params": net.n_params,
        "params": _floats(net.params),
    }


def model_from_dict(blob: dict):
    if blob.get("format") != MODEL_FORMAT:
        raise FormatError("not a model file")
    if blob.get("version") != VERSION:
        raise FormatError(f"unsupported model version {blob.get('version')}")
    head_name = blob["head"]
    hc = blob["head_config"]
    if head_name == "categorical":
        head = CategoricalHead.from_json(hc)
    elif head_name in ("gaussian", "diagonal"):
        head = GaussianHead(blob["action_dim"], diagonal=(head_name == "diagonal"),
                            diag_floor=hc["diag_floor"])
    else:
        raise FormatError(f"unknown head {head_name!r}")
    params = np.array(blob["params"], dtype=float)
    if len(params) != blob["n_params"]:
        raise FormatError("parameter count does not match the header")
    net = PredictorNet(blob["obs_dim"], blob["action_dim"], blob["hidden_size"], head=head,
                       prev_action=blob["prev_action"], shared=blob["shared"], params=params)
    return net, blob


def save_model(path, net, **kw):
    Path(path).write_text(json.dumps(model_to_dict(net, **kw)) + "\n")


def load_model(path):
    return model_from_dict(json.loads(Path(path).read_text()))


def save_attack(path, spec, hyper=None, cfg_hash=None):
    blob = {
        "format": ATTACK_FORMAT,
        "version": VERSION,
        "tool_version": __version__,
        "config_hash": cfg_hash,
        "kind": spec.kind,
        "victims": list(spec.victims),
        "t0": spec.t0,
        "epsilon": spec.epsilon,
        "lam": spec.lam,
        "hyper": hyper or {},
        "n_params": 0 if spec.policy_params is None else len(spec.policy_params),
        "params": [] if spec.policy_params is None else _floats(spec.policy_params),
    }
    Path(path).write_text(json.dumps(blob, default=_jsonable) + "\n")


def load_attack(path):
    from .attacks import AttackSpec

    blob = json.loads(Path(path).read_text())
    if blob.get("format") != ATTACK_FORMAT or blob.get("version") != VERSION:
        raise FormatError("not a version-1 attack file")
    params = tuple(blob["params"]) or None
    spec = AttackSpec(blob["kind"], tuple(blob["victims"]), blob["t0"], blob["epsilon"],
                      blob["lam"], params)
    return spec, blob


# ---------------------------------------------------------------- traces


def write_trace(path, ro, k: int, header: dict):
    """Write episode ``k`` of a rollout as a JSON-lines trace."""
    T = ro.rewards.shape[1]
    lines = [json.dumps({"format": TRACE_FORMAT, "version": VERSION,
                         "tool_version": __version__, "episode_seed": int(ro.seeds[k]),
                         "horizon": T, **header}, default=_jsonable)]
    for t in range(T):
        lines.append(json.dumps({
            "t": t,
            "positions": ro.positions[k, t].tolist(),
            "goal": ro.goal[k].tolist(),
            "obs": ro.obs[k, t].tolist(),
            "actions": ro.actions[k, t].tolist(),
            "reward": float(ro.rewards[k, t]),
            "attack_active": ro.attack_active[k, t].tolist(),
        }))
    Path(path).write_text("\n".join(lines) + "\n")


def read_trace(path) -> dict:
    """Parse a trace into arrays: obs (T, K, n), actions (T, K, d), rewards (T,)..."""
    rows = [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
    if not rows or rows[0].get("format") != TRACE_FORMAT:
        raise FormatError(f"{path} is not an episode trace")
    header, steps = rows[0], rows[1:]
    return {
        "header": header,
        "positions": np.array([s["positions"] for s in steps]),
        "goal": np.array(steps[0]["goal"]) if steps else None,
        "obs": np.array([s["obs"] for s in steps]),
        "actions": np.array([s["actions"] for s in steps]),
        "rewards": np.array([s["reward"] for s in steps]),
        "attack_active": np.array([s["attack_active"] for s in steps], dtype=bool),
    }
