"""Euler path engine for the two-factor dynamics.

Paths are driven by two independent Brownian increments per step; the
noise of path i is derived from (master_seed, i) alone, so results are
reproducible path-by-path regardless of chunking or thread count, and a
run with fewer paths is a prefix of a longer one.  Coefficients are
evaluated through the model's own full-line extension, so no state
truncation happens here: a variance excursion below zero is handled by
the coefficients, not the stepper.
"""

from __future__ import annotations

import io
import json
import math
import zipfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .volmodel import InvariantError, VolModel

_CHUNK = 4096
_INVALID_BUDGET = 1e-3
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


class InvalidPathBudgetError(RuntimeError):
    """More than the tolerated share of paths produced non-finite states."""

    def __init__(self, n_invalid: int, n_paths: int):
        super().__init__(
            f"{n_invalid} of {n_paths} paths are non-finite "
            f"(budget {_INVALID_BUDGET:.1%})"
        )
        self.n_invalid = n_invalid
        self.n_paths = n_paths


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [t0, horizon] with n_steps steps."""

    t0: float
    horizon: float
    n_steps: int

    def __post_init__(self):
        if not (self.horizon > self.t0):
            raise InvariantError(f"horizon must exceed t0, got [{self.t0}, {self.horizon}]")
        if self.n_steps < 1:
            raise InvariantError(f"n_steps must be >= 1, got {self.n_steps}")

    @property
    def dt(self) -> float:
        return (self.horizon - self.t0) / self.n_steps

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.t0, self.horizon, self.n_steps + 1)


@dataclass
class PathSet:
    """Simulated trajectories on the grid nodes.

    x and v have shape [n_paths, n_steps + 1]; row i starts at the common
    initial state and was driven by noise derived from (master_seed, i).
    invalid marks rows that left the finite range at some node.
    """

    grid: TimeGrid
    x: np.ndarray
    v: np.ndarray
    master_seed: int
    scheme: str = "euler"
    invalid: np.ndarray = field(default=None)

    @property
    def n_paths(self) -> int:
        return self.x.shape[0]

    @property
    def n_invalid(self) -> int:
        return int(self.invalid.sum())

    def valid_x(self) -> np.ndarray:
        return self.x[~self.invalid]

    def valid_v(self) -> np.ndarray:
        return self.v[~self.invalid]


def path_rng(master_seed: int, path_id: int) -> np.random.Generator:
    """The generator that drives path path_id under master_seed."""
    return np.random.default_rng(np.random.SeedSequence([master_seed, path_id]))


def path_increments(grid: TimeGrid, master_seed: int, path_id: int):
    """Re-derive the (dW, dW~) increments the engine used for one path."""
    z = path_rng(master_seed, path_id).standard_normal((grid.n_steps, 2))
    scale = math.sqrt(grid.dt)
    return z[:, 0] * scale, z[:, 1] * scale


def _fill_noise(out: np.ndarray, master_seed: int, lo: int) -> None:
    for j in range(out.shape[0]):
        rng = np.random.default_rng(np.random.SeedSequence([master_seed, lo + j]))
        out[j] = rng.standard_normal(out.shape[1:])


def simulate_paths(
    model: VolModel,
    start,
    grid: TimeGrid,
    n_paths: int,
    master_seed: int,
    threads: int = 1,
) -> PathSet:
    """Euler-step n_paths trajectories of (X, V) from start = (x0, v0).

    Raises InvalidPathBudgetError when more than 0.1% of paths go
    non-finite.  Identical inputs reproduce the PathSet bitwise for any
    thread count.
    """
    x0, v0 = float(start[0]), float(start[1])
    if not (math.isfinite(x0) and math.isfinite(v0)):
        raise InvariantError(f"start state must be finite, got {start!r}")
    if n_paths < 1:
        raise InvariantError(f"n_paths must be >= 1, got {n_paths}")
    if master_seed < 0:
        raise InvariantError(f"master_seed must be non-negative, got {master_seed}")

    nodes = grid.nodes
    dt = grid.dt
    n_nodes = grid.n_steps + 1
    xs = np.empty((n_paths, n_nodes))
    vs = np.empty((n_paths, n_nodes))

    rhos = np.array([float(model.correlation(t)) for t in nodes[:-1]])
    if np.any(np.abs(rhos) >= 1.0):
        raise InvariantError("correlation must stay inside (-1, 1) on the grid")
    c_w = np.sqrt(1.0 - rhos**2)
    bs = np.array([float(model.drift_b(t)) for t in nodes[:-1]])

    def run_chunk(lo: int, hi: int) -> None:
        z = np.empty((hi - lo, grid.n_steps, 2))
        _fill_noise(z, master_seed, lo)
        z *= math.sqrt(dt)
        x = np.full(hi - lo, x0)
        v = np.full(hi - lo, v0)
        xs[lo:hi, 0] = x
        vs[lo:hi, 0] = v
        with np.errstate(over="ignore", invalid="ignore"):
            for k in range(grid.n_steps):
                t = nodes[k]
                theta = model.vol_of_price(t, v)
                zeta = model.drift_v(t, v)
                eta = model.vol_of_v(t, v)
                dw = z[:, k, 0]
                dwt = z[:, k, 1]
                x = x + (bs[k] - 0.5 * theta * theta) * dt + theta * (c_w[k] * dw + rhos[k] * dwt)
                v = v + zeta * dt + eta * dwt
                xs[lo:hi, k + 1] = x
                vs[lo:hi, k + 1] = v

    bounds = [(lo, min(lo + _CHUNK, n_paths)) for lo in range(0, n_paths, _CHUNK)]
    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(lambda b: run_chunk(*b), bounds))
    else:
        for b in bounds:
            run_chunk(*b)

    invalid = ~(np.isfinite(xs).all(axis=1) & np.isfinite(vs).all(axis=1))
    paths = PathSet(grid=grid, x=xs, v=vs, master_seed=master_seed, invalid=invalid)
    if paths.n_invalid > _INVALID_BUDGET * n_paths:
        raise InvalidPathBudgetError(paths.n_invalid, n_paths)
    return paths


def exact_price(grid: TimeGrid, v_path, dw_hat, drift_b, theta_fn, s0: float) -> np.ndarray:
    """Stochastic-exponential price along one trajectory.

    v_path holds V on the grid nodes, dw_hat the n_steps combined price
    increments.  The recursion S_{k+1} = S_k exp(theta dw + (b - theta^2/2) dt)
    matches exp(X) node-for-node when driven by the same increments.
    """
    v_path = np.asarray(v_path, dtype=float)
    dw_hat = np.asarray(dw_hat, dtype=float)
    if v_path.shape[0] != grid.n_steps + 1 or dw_hat.shape[0] != grid.n_steps:
        raise InvariantError("v_path/dw_hat lengths do not match the grid")
    nodes = grid.nodes
    dt = grid.dt
    out = np.empty(grid.n_steps + 1)
    out[0] = s0
    log_s = math.log(s0)
    for k in range(grid.n_steps):
        t = nodes[k]
        th = float(theta_fn(t, v_path[k]))
        b = float(drift_b(t))
        log_s += th * dw_hat[k] + (b - 0.5 * th * th) * dt
        out[k + 1] = math.exp(log_s)
    return out


@dataclass(frozen=True)
class MomentReport:
    """Sampled moment envelopes versus their model bounds."""

    v_mean_abs: np.ndarray
    v_bound: np.ndarray
    v_stderr: np.ndarray
    v_violations: int
    x_sup_mean: float
    x_sup_stderr: float
    x_bound: float
    ok: bool


def moment_report(paths: PathSet, model: VolModel) -> MomentReport:
    """Check sampled E|V_t| and E[sup |X|] against the coefficient envelopes.

    Needs the model's drift and theta envelopes; violations beyond three
    standard errors clear the ok flag.
    """
    if model.drift_envelope is None or model.theta_envelope is None:
        raise InvariantError("model carries no moment envelopes")
    k_zeta, l_zeta = model.drift_envelope
    k_theta, lam_theta = model.theta_envelope
    grid = paths.grid
    nodes = grid.nodes
    v = paths.valid_v()
    x = paths.valid_x()
    n = v.shape[0]

    av = np.abs(v)
    v_mean = av.mean(axis=0)
    v_stderr = av.std(axis=0, ddof=1) / math.sqrt(n)

    # E|V_t| <= e^{int l} |v0| + int_t0^t e^{int_s^t l} k(s) ds, trapezoid in s.
    l_vals = np.array([float(l_zeta(t)) for t in nodes])
    k_vals = np.array([float(k_zeta(t)) for t in nodes])
    cum_l = np.concatenate([[0.0], np.cumsum((l_vals[1:] + l_vals[:-1]) * 0.5 * grid.dt)])
    v_bound = np.empty_like(v_mean)
    for i in range(len(nodes)):
        decay = np.exp(cum_l[i] - cum_l[: i + 1])
        integ = np.trapezoid(decay * k_vals[: i + 1], nodes[: i + 1]) if i > 0 else 0.0
        v_bound[i] = math.exp(cum_l[i]) * v_mean[0] + integ
    v_violations = int(np.sum(v_mean > v_bound + 3.0 * v_stderr + 1e-12))

    sup_x = np.abs(x).max(axis=1)
    x_sup_mean = float(sup_x.mean())
    x_sup_stderr = float(sup_x.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    b_abs = np.array([abs(float(model.drift_b(t))) for t in nodes])
    kt = np.array([float(k_theta(t)) for t in nodes])
    lt = np.array([float(lam_theta(t)) for t in nodes])
    int_b_kt2 = float(np.trapezoid(b_abs + kt**2, nodes))
    int_kt2 = float(np.trapezoid(kt**2, nodes))
    int_lt2 = float(np.trapezoid(lt**2, nodes))
    c0 = int_b_kt2 + 2.0 * math.sqrt(int_kt2) + math.sqrt(int_lt2)
    c1 = int_lt2 + math.sqrt(int_lt2)
    x_bound = abs(float(x[0, 0])) + c0 + c1 * float(v_mean.max())
    ok = v_violations == 0 and x_sup_mean <= x_bound + 3.0 * x_sup_stderr
    return MomentReport(
        v_mean_abs=v_mean,
        v_bound=v_bound,
        v_stderr=v_stderr,
        v_violations=v_violations,
        x_sup_mean=x_sup_mean,
        x_sup_stderr=x_sup_stderr,
        x_bound=x_bound,
        ok=ok,
    )


@dataclass(frozen=True)
class PositivityPathReport:
    min_v: float
    frac_nonpositive: float
    n_paths: int
    n_steps: int


def positivity_report(paths: PathSet) -> PositivityPathReport:
    """Minimum simulated variance and the share of (path, node) pairs <= 0."""
    v = paths.valid_v()
    return PositivityPathReport(
        min_v=float(v.min()),
        frac_nonpositive=float((v <= 0.0).mean()),
        n_paths=int(v.shape[0]),
        n_steps=paths.grid.n_steps,
    )


def write_paths_csv(paths: PathSet, fileobj) -> None:
    """Stream (path_id, t, x, v) rows with full float precision."""
    nodes = paths.grid.nodes
    fileobj.write("path_id,t,x,v\n")
    for i in range(paths.n_paths):
        for k in range(len(nodes)):
            fileobj.write(
                f"{i},{nodes[k]:.17g},{paths.x[i, k]:.17g},{paths.v[i, k]:.17g}\n"
            )


def _write_deterministic_zip(path, members: dict) -> None:
    # np.savez stamps wall-clock times into the archive; a fixed epoch keeps
    # byte-identical outputs for identical inputs.
    with zipfile.ZipFile(path, "w", zipfile.ZIP_DEFLATED) as zf:
        for name, payload in sorted(members.items()):
            info = zipfile.ZipInfo(name, date_time=_ZIP_EPOCH)
            info.compress_type = zipfile.ZIP_DEFLATED
            zf.writestr(info, payload)


def _npy_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(arr))
    return buf.getvalue()


def save_pathset(paths: PathSet, path) -> None:
    """Binary cache: a zip of .npy members plus a JSON header."""
    header = {
        "kind": "pathset",
        "master_seed": int(paths.master_seed),
        "scheme": paths.scheme,
        "t0": paths.grid.t0,
        "horizon": paths.grid.horizon,
        "n_steps": paths.grid.n_steps,
    }
    _write_deterministic_zip(
        path,
        {
            "header.json": json.dumps(header, sort_keys=True).encode(),
            "x.npy": _npy_bytes(paths.x),
            "v.npy": _npy_bytes(paths.v),
            "invalid.npy": _npy_bytes(paths.invalid),
        },
    )


def load_pathset(path) -> PathSet:
    with zipfile.ZipFile(path) as zf:
        header = json.loads(zf.read("header.json"))
        if header.get("kind") != "pathset":
            raise InvariantError(f"not a pathset cache: {path}")
        x = np.lib.format.read_array(io.BytesIO(zf.read("x.npy")))
        v = np.lib.format.read_array(io.BytesIO(zf.read("v.npy")))
        invalid = np.lib.format.read_array(io.BytesIO(zf.read("invalid.npy")))
    grid = TimeGrid(header["t0"], header["horizon"], header["n_steps"])
    return PathSet(
        grid=grid,
        x=x,
        v=v,
        master_seed=header["master_seed"],
        scheme=header["scheme"],
        invalid=invalid,
    )
