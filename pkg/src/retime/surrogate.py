"""Neural-ODE surrogate in stretched time.

Two tanh MLPs share the input ``[y~, tau, p~]`` (nondimensional state,
stretched time and log-parameter, each scaled to ``[-1, 1]``): the state network predicts
``dy~/dtau`` and the dilation network predicts ``log(dt~/dtau)``, so the
dilation ``alpha`` is positive by construction. Both are trained jointly by
backpropagation through explicit-Euler rollouts whose horizon grows during
training.

Nondimensional coordinates: states map to ``[-1, 1]`` with the training-set
extrema and time maps to ``[0, 5]`` with each case's physical horizon.
"""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
from scipy.stats import qmc

from .errors import NonFinite
from .io import read_json, write_json, write_rows

TIME_SPAN = 5.0
DTYPE = torch.float64


# ---------------------------------------------------------------------------
# configuration

@dataclass(frozen=True)
class MlpSpec:
    """Hidden widths shared by the state and dilation networks."""

    n_state: int
    n_param: int = 1
    hidden: tuple[int, ...] = (16, 16, 16)

    def __post_init__(self):
        if self.n_state < 1 or self.n_param < 0:
            raise ValueError("n_state must be >= 1 and n_param >= 0")
        if not self.hidden or min(self.hidden) < 1:
            raise ValueError("need at least one hidden layer of positive width")

    @property
    def n_in(self) -> int:
        return self.n_state + 1 + self.n_param

    def sizes(self, n_out: int) -> list[int]:
        return [self.n_in, *self.hidden, n_out]

    def n_params(self, n_out: Optional[int] = None) -> int:
        s = self.sizes(self.n_state if n_out is None else n_out)
        return sum((a + 1) * b for a, b in zip(s[:-1], s[1:]))


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 5e-3
    epochs: int = 200
    pretrain_iters: int = 200
    initial_horizon: int = 2
    horizon_interval: int = 1
    # network predictions per case per epoch
    budget: int = 1000
    rollouts_per_step: int = 10
    lr_final: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if not self.lr > 0 or not self.lr_final > 0:
            raise ValueError("learning rates must be positive")
        if self.epochs < 0 or self.pretrain_iters < 0:
            raise ValueError("epochs and pretrain_iters must be >= 0")
        if self.initial_horizon < 1 or self.horizon_interval < 1:
            raise ValueError("initial_horizon and horizon_interval must be >= 1")
        if self.budget < 1 or self.rollouts_per_step < 1:
            raise ValueError("budget and rollouts_per_step must be >= 1")

    @classmethod
    def full_scale(cls, **kw) -> "TrainConfig":
        return cls(**{"epochs": 5000, "pretrain_iters": 1000, **kw})

    def lr_at(self, epoch: int) -> float:
        """Geometric decay from ``lr`` at epoch 1 to ``lr_final`` at the last epoch."""
        if self.epochs <= 1:
            return self.lr
        frac = (epoch - 1) / (self.epochs - 1)
        return self.lr * (self.lr_final / self.lr) ** frac

    def horizon_at(self, epoch: int, max_steps: int) -> int:
        return min(self.initial_horizon + (epoch - 1) // self.horizon_interval, max_steps)


# ---------------------------------------------------------------------------
# scaling

def _affine(lo, hi):
    lo = np.asarray(lo, dtype=float)
    span = np.asarray(hi, dtype=float) - lo
    return lo, np.where(span > 0, span, 1.0)


@dataclass
class ScalingSet:
    """Affine maps between raw quantities and network coordinates.

    ``y~ = 2 (y - y_lo) / y_span - 1``; ``t~ = 5 t / T``;
    ``p~ = 2 (log10 mu - p_lo) / p_span - 1``; ``tau`` enters as ``2 tau / tau_f - 1``. Network outputs ``o`` in
    ``[-1, 1]`` map to derivatives via ``lo + (o + 1) span / 2`` with the
    training-set extrema of ``dy~/dtau`` and ``log(dt~/dtau)``.
    """

    y_lo: np.ndarray
    y_span: np.ndarray
    p_lo: np.ndarray
    p_span: np.ndarray
    f_lo: np.ndarray
    f_span: np.ndarray
    g_lo: float
    g_span: float
    tau_f: float = 5.0

    @classmethod
    def fit(cls, states: Sequence[np.ndarray], params: np.ndarray, times: Sequence[np.ndarray],
            horizons: Sequence[float], dtau: float) -> "ScalingSet":
        ally = np.vstack(states)
        y_lo, y_span = _affine(ally.min(0), ally.max(0))
        params = np.atleast_2d(np.asarray(params, dtype=float).T).T
        p_lo, p_span = _affine(params.min(0), params.max(0))
        fs, gs = [], []
        for y, t, T in zip(states, times, horizons):
            yt = 2.0 * (y - y_lo) / y_span - 1.0
            fs.append(np.diff(yt, axis=0) / dtau)
            gs.append(np.log(np.diff(TIME_SPAN * np.asarray(t) / T) / dtau))
        fs, gs = np.vstack(fs), np.concatenate(gs)
        f_lo, f_span = _affine(fs.min(0), fs.max(0))
        g_lo, g_span = _affine(gs.min(), gs.max())
        tau_f = dtau * (len(states[0]) - 1)
        return cls(y_lo, y_span, p_lo, p_span, f_lo, f_span, float(g_lo), float(g_span), float(tau_f))

    def scale_state(self, y):
        return 2.0 * (y - self.y_lo) / self.y_span - 1.0

    def descale_state(self, yt):
        return self.y_lo + 0.5 * (yt + 1.0) * self.y_span

    def scale_param(self, log_mu):
        return 2.0 * (np.atleast_1d(log_mu) - self.p_lo) / self.p_span - 1.0

    def descale_param(self, pt):
        return self.p_lo + 0.5 * (pt + 1.0) * self.p_span

    @staticmethod
    def scale_time(t, T):
        return TIME_SPAN * np.asarray(t) / T

    @staticmethod
    def descale_time(tt, T):
        return np.asarray(tt) * T / TIME_SPAN

    def to_dict(self) -> dict:
        return {k: np.asarray(v).tolist() for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d) -> "ScalingSet":
        arr = {k: np.asarray(v, dtype=float) for k, v in d.items()}
        for k in ("g_lo", "g_span", "tau_f"):
            arr[k] = float(arr[k])
        return cls(**arr)


# ---------------------------------------------------------------------------
# networks

class Mlp(torch.nn.Module):
    def __init__(self, sizes: Sequence[int], generator: torch.Generator):
        super().__init__()
        self.layers = torch.nn.ModuleList()
        for a, b in zip(sizes[:-1], sizes[1:]):
            lin = torch.nn.Linear(a, b, dtype=DTYPE)
            bound = 1.0 / math.sqrt(a)
            with torch.no_grad():
                lin.weight.uniform_(-bound, bound, generator=generator)
                lin.bias.zero_()
            self.layers.append(lin)

    def forward(self, x):
        for lin in self.layers[:-1]:
            x = torch.tanh(lin(x))
        return self.layers[-1](x)


class Surrogate(torch.nn.Module):
    """State and dilation networks plus the scaling that wraps them."""

    def __init__(self, spec: MlpSpec, scaling: ScalingSet, seed: int = 0):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        self.spec = spec
        self.scaling = scaling
        self.state_net = Mlp(spec.sizes(spec.n_state), gen)
        self.dilation_net = Mlp(spec.sizes(1), gen)
        self._buffers_from_scaling()

    def _buffers_from_scaling(self):
        s = self.scaling
        self.f_lo = torch.as_tensor(s.f_lo, dtype=DTYPE)
        self.f_half = torch.as_tensor(0.5 * s.f_span, dtype=DTYPE)
        self.g_lo, self.g_half = s.g_lo, 0.5 * s.g_span
        self.tau_f = s.tau_f

    def inputs(self, yt, tau, pt):
        """Network input from nondimensional state, stretched time and scaled parameter."""
        return torch.cat([yt, (2.0 / self.tau_f * tau - 1.0).unsqueeze(-1), pt], dim=-1)

    def derivatives(self, yt, tau, pt):
        """``(dy~/dtau, alpha)`` at nondimensional inputs; ``alpha = dt~/dtau``."""
        x = self.inputs(yt, tau, pt)
        f = self.f_lo + (self.state_net(x) + 1.0) * self.f_half
        alpha = torch.exp(self.g_lo + (self.dilation_net(x)[..., 0] + 1.0) * self.g_half)
        return f, alpha

    def unroll(self, yt0, tt0, pt, n_steps: int, dtau: float, tau0=None, check: bool = True):
        """Forward-Euler unroll; returns ``(B, n+1, d)`` states and ``(B, n+1)`` times."""
        ys, ts = [yt0], [tt0]
        y, t = yt0, tt0
        tau0 = torch.zeros_like(tt0) if tau0 is None else tau0
        for j in range(n_steps):
            f, alpha = self.derivatives(y, tau0 + j * dtau, pt)
            y = y + dtau * f
            t = t + dtau * alpha
            if check and not (torch.isfinite(y).all() and torch.isfinite(t).all()):
                raise NonFinite(j + 1, f"surrogate rollout non-finite at step {j + 1}")
            ys.append(y)
            ts.append(t)
        return torch.stack(ys, dim=1), torch.stack(ts, dim=1)

    def rollout(self, y0, mu: float, n_steps: int, dtau: float, T: float):
        """Dimensional rollout from physical ``y0`` for parameter ``mu`` and horizon ``T``.

        Returns ``(tau, y, t)`` as numpy arrays on the uniform tau grid.
        """
        s = self.scaling
        yt0 = torch.as_tensor(s.scale_state(np.asarray(y0, dtype=float)), dtype=DTYPE)[None]
        pt = torch.as_tensor(s.scale_param(math.log10(mu)), dtype=DTYPE)[None]
        tt0 = torch.zeros(1, dtype=DTYPE)
        with torch.no_grad():
            yt, tt = self.unroll(yt0, tt0, pt, n_steps, dtau)
        tau = dtau * np.arange(n_steps + 1)
        return tau, s.descale_state(yt[0].numpy()), s.descale_time(tt[0].numpy(), T)

    # -- checkpoint ---------------------------------------------------------

    def state_payload(self) -> dict:
        out = {}
        for name, net in (("state_net", self.state_net), ("dilation_net", self.dilation_net)):
            shapes, flat = [], []
            for lin in net.layers:
                shapes.append(list(lin.weight.shape))
                flat.extend(lin.weight.detach().numpy().ravel(order="C").tolist())
                flat.extend(lin.bias.detach().numpy().tolist())
            out[name] = {"shapes": shapes, "weights": flat}
        out["spec"] = {"n_state": self.spec.n_state, "n_param": self.spec.n_param,
                       "hidden": list(self.spec.hidden)}
        out["scaling"] = self.scaling.to_dict()
        return out

    @classmethod
    def from_payload(cls, d) -> "Surrogate":
        spec = MlpSpec(d["spec"]["n_state"], d["spec"]["n_param"], tuple(d["spec"]["hidden"]))
        model = cls(spec, ScalingSet.from_dict(d["scaling"]))
        for name in ("state_net", "dilation_net"):
            flat = np.asarray(d[name]["weights"], dtype=float)
            k = 0
            with torch.no_grad():
                for lin, (o, i) in zip(getattr(model, name).layers, d[name]["shapes"]):
                    lin.weight.copy_(torch.as_tensor(flat[k:k + o * i].reshape(o, i)))
                    k += o * i
                    lin.bias.copy_(torch.as_tensor(flat[k:k + o]))
                    k += o
        return model


def save_checkpoint(path: Path, model: Surrogate, cfg: Optional[TrainConfig] = None) -> None:
    payload = model.state_payload()
    if cfg is not None:
        payload["config"] = asdict(cfg)
    write_json(Path(path), payload)


def load_checkpoint(path: Path) -> Surrogate:
    return Surrogate.from_payload(read_json(Path(path)))


def save_history(path: Path, history: Sequence[float]) -> None:
    write_rows(Path(path), ({"epoch": e, "loss": float(v)} for e, v in enumerate(history)))


# ---------------------------------------------------------------------------
# training data

@dataclass
class TrainingSet:
    """Nondimensional training tensors for ``C`` cases on a shared uniform tau grid."""

    yt: torch.Tensor  # (C, N, d)
    tt: torch.Tensor  # (C, N)
    pt: torch.Tensor  # (C, n_param)
    dtau: float
    scaling: ScalingSet
    horizons: np.ndarray
    mus: np.ndarray

    @property
    def n_cases(self) -> int:
        return self.yt.shape[0]

    @property
    def n_tau(self) -> int:
        return self.yt.shape[1]

    @classmethod
    def from_results(cls, results, scaling: Optional[ScalingSet] = None,
                     horizons: Optional[Sequence[float]] = None) -> "TrainingSet":
        """Build from reparameterized trajectories (anything with ``tau_grid``, ``y_of_tau``, ``t_of_tau``, ``mu``).

        ``horizons`` overrides the per-case time scale ``T`` (default: each case's time span).
        """
        results = list(results)
        if not results:
            raise ValueError("no training data")
        n = len(results[0].tau_grid)
        if any(len(r.tau_grid) != n for r in results):
            raise ValueError("all results must share the tau-grid length")
        dtau = float(results[0].tau_grid[1] - results[0].tau_grid[0])
        mus = np.array([float(r.mu) for r in results])
        if horizons is None:
            horizons = [float(r.t_of_tau[-1] - r.t_of_tau[0]) for r in results]
        horizons = np.asarray(horizons, dtype=float)
        logmu = np.log10(mus)[:, None]
        if scaling is None:
            scaling = ScalingSet.fit([r.y_of_tau for r in results], logmu,
                                     [r.t_of_tau for r in results], horizons, dtau)
        yt = np.stack([scaling.scale_state(r.y_of_tau) for r in results])
        tt = np.stack([scaling.scale_time(r.t_of_tau - r.t_of_tau[0], T)
                       for r, T in zip(results, horizons)])
        pt = np.stack([scaling.scale_param(l) for l in logmu[:, 0]])
        return cls(torch.as_tensor(yt, dtype=DTYPE), torch.as_tensor(tt, dtype=DTYPE),
                   torch.as_tensor(pt, dtype=DTYPE), dtau, scaling, horizons, mus)


def segment_loss(model: Surrogate, data: TrainingSet, cases, starts, horizon: int):
    """Loss of ``horizon``-step rollouts started from data points.

    Squared errors of the ``N_q`` nondimensional states and the ``[0, 5]``
    time are averaged over steps and rollouts, summed over components and
    divided by ``N_q + 1``.
    """
    cases = torch.as_tensor(cases)
    starts = torch.as_tensor(starts)
    idx = starts[:, None] + torch.arange(horizon + 1)
    y_true = data.yt[cases[:, None], idx]
    t_true = data.tt[cases[:, None], idx]
    y_pred, t_pred = model.unroll(y_true[:, 0], t_true[:, 0], data.pt[cases], horizon, data.dtau,
                                  tau0=starts.to(DTYPE) * data.dtau)
    sq_y = (y_pred[:, 1:] - y_true[:, 1:]) ** 2
    sq_t = (t_pred[:, 1:] - t_true[:, 1:]) ** 2
    n_q = y_true.shape[-1]
    return (sq_y.mean(dim=(0, 1)).sum() + sq_t.mean()) / (n_q + 1)


@dataclass
class TrainResult:
    model: Surrogate
    history: list[float]
    pretrain_history: list[float] = field(default_factory=list)
    seconds: float = 0.0


def _all_single_steps(data: TrainingSet):
    c = np.repeat(np.arange(data.n_cases), data.n_tau - 1)
    s = np.tile(np.arange(data.n_tau - 1), data.n_cases)
    return c, s


def single_step_targets(data: TrainingSet):
    """Inputs and raw-output targets that make one Euler step reproduce the data exactly.

    Targets live in the networks' output coordinates (derivative extrema
    mapped to ``[-1, 1]``), so every output carries unit weight.
    """
    sc = data.scaling
    y0 = data.yt[:, :-1].reshape(-1, data.yt.shape[-1])
    tau = (torch.arange(data.n_tau - 1, dtype=DTYPE) * data.dtau).repeat(data.n_cases)
    p = data.pt.repeat_interleave(data.n_tau - 1, dim=0)
    f = (data.yt[:, 1:] - data.yt[:, :-1]).reshape(-1, data.yt.shape[-1]) / data.dtau
    g = torch.log((data.tt[:, 1:] - data.tt[:, :-1]).reshape(-1) / data.dtau)
    f_lo = torch.as_tensor(sc.f_lo, dtype=DTYPE)
    f_span = torch.as_tensor(sc.f_span, dtype=DTYPE)
    of = 2.0 * (f - f_lo) / f_span - 1.0
    og = 2.0 * (g - sc.g_lo) / sc.g_span - 1.0
    return y0, tau, p, of, og


def pretrain_loss(model: Surrogate, targets):
    y0, tau, p, of, og = targets
    x = model.inputs(y0, tau, p)
    err_f = (model.state_net(x) - of) ** 2
    err_g = (model.dilation_net(x)[:, 0] - og) ** 2
    return (err_f.sum(dim=1) + err_g).mean() / (of.shape[1] + 1)


def train(
    data: TrainingSet,
    cfg: TrainConfig,
    spec: Optional[MlpSpec] = None,
    model: Optional[Surrogate] = None,
    log=None,
) -> TrainResult:
    """Pretrain on single-step targets, then train on growing-horizon rollouts.

    ``pretrain_history`` holds the output-space regression loss per
    iteration plus a final evaluation. ``history[0]`` is the full single-step loss entering the epoch loop and
    ``history[e]`` the mean rollout loss of epoch ``e``. With ``epochs == 0``
    no optimization happens at all.
    """
    t_start = time.perf_counter()
    if model is None:
        if spec is None:
            spec = MlpSpec(data.yt.shape[-1], data.pt.shape[-1])
        model = Surrogate(spec, data.scaling, seed=cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    params = list(model.parameters())
    opt = torch.optim.Adam(params, lr=cfg.lr, betas=(0.9, 0.999), eps=1e-8)
    c1, s1 = _all_single_steps(data)

    def full_single_step():
        with torch.no_grad():
            return float(segment_loss(model, data, c1, s1, 1))

    if cfg.epochs == 0:
        return TrainResult(model, [full_single_step()], [], time.perf_counter() - t_start)

    pre_hist = []
    targets = single_step_targets(data)
    for _ in range(cfg.pretrain_iters):
        opt.zero_grad()
        loss = pretrain_loss(model, targets)
        _check_loss(loss, "pretraining")
        loss.backward()
        opt.step()
        pre_hist.append(float(loss.detach()))
    if cfg.pretrain_iters:
        with torch.no_grad():
            pre_hist.append(float(pretrain_loss(model, targets)))

    history = [full_single_step()]
    max_h = data.n_tau - 1
    for epoch in range(1, cfg.epochs + 1):
        for g in opt.param_groups:
            g["lr"] = cfg.lr_at(epoch)
        h = cfg.horizon_at(epoch, max_h)
        n_roll = max(1, cfg.budget // h)
        starts = rng.integers(0, data.n_tau - h, size=(data.n_cases, n_roll))
        total, count = 0.0, 0
        for k in range(0, n_roll, cfg.rollouts_per_step):
            blk = starts[:, k:k + cfg.rollouts_per_step]
            cases = np.repeat(np.arange(data.n_cases), blk.shape[1])
            opt.zero_grad()
            loss = segment_loss(model, data, cases, blk.ravel(), h)
            _check_loss(loss, f"epoch {epoch}")
            loss.backward()
            opt.step()
            total += float(loss.detach()) * blk.size
            count += blk.size
        history.append(total / count)
        if log is not None:
            log(epoch, h, history[-1])
    return TrainResult(model, history, pre_hist, time.perf_counter() - t_start)


def _check_loss(loss, where):
    if not torch.isfinite(loss):
        raise NonFinite(0, f"non-finite loss during {where}")


@dataclass
class Prediction:
    """Surrogate output on a uniform tau grid, in physical units."""

    tau_grid: np.ndarray
    y_of_tau: np.ndarray
    t_of_tau: np.ndarray
    mu: float


def predict(model: Surrogate, ref) -> Prediction:
    """Full-horizon rollout matching a reference result's grid, initial state and horizon."""
    tau = np.asarray(ref.tau_grid)
    T = float(ref.t_of_tau[-1] - ref.t_of_tau[0])
    _, y, t = model.rollout(ref.y_of_tau[0], ref.mu, len(tau) - 1, float(tau[1] - tau[0]), T)
    return Prediction(tau, y, t + ref.t_of_tau[0], float(ref.mu))


# ---------------------------------------------------------------------------
# hyperparameter sampling

LHS_DIMS = ("depth", "n_params", "lr_exponent", "initial_horizon", "horizon_interval")


@dataclass(frozen=True)
class SampledConfig:
    train: TrainConfig
    mlp: MlpSpec
    # the unit-cube Latin hypercube point behind this configuration
    unit: tuple[float, ...]
    target_params: int


def _count(width: int, depth: int, n_in: int, n_out: int) -> int:
    return (n_in + 1) * width + (depth - 1) * (width + 1) * width + (width + 1) * n_out


def solve_width(n_params: float, depth: int, n_in: int, n_out: int) -> int:
    """Integer hidden width whose parameter count is closest to ``n_params``."""
    a, b, c = depth - 1, n_in + 1 + (depth - 1) + n_out, n_out - n_params
    w = -c / b if a == 0 else (-b + math.sqrt(b * b - 4 * a * c)) / (2 * a)
    cands = {max(1, math.floor(w)), max(1, math.ceil(w))}
    return min(sorted(cands), key=lambda k: abs(_count(k, depth, n_in, n_out) - n_params))


def _count_widths(widths: Sequence[int], n_in: int, n_out: int) -> int:
    s = [n_in, *widths, n_out]
    return sum((a + 1) * b for a, b in zip(s[:-1], s[1:]))


def solve_widths(n_params: float, depth: int, n_in: int, n_out: int) -> tuple[int, ...]:
    """Hidden widths closest to ``n_params``, allowing layers to differ by one unit.

    Uniform integer widths move the count in steps of roughly ``2 w depth``,
    too coarse for small budgets; mixing ``w`` and ``w + 1`` fills the gaps.
    """
    w = solve_width(n_params, depth, n_in, n_out)
    cands = [(v + 1,) * k + (v,) * (depth - k)
             for v in range(max(1, w - 1), w + 1) for k in range(depth + 1)]
    return min(cands, key=lambda ws: (abs(_count_widths(ws, n_in, n_out) - n_params), ws))


def _stratum(u: float, lo: int, hi: int) -> int:
    return lo + min(int(u * (hi - lo + 1)), hi - lo)


def sample_configs(n: int, seed: int = 0, n_state: int = 3, n_param: int = 1,
                   base: TrainConfig = TrainConfig()) -> list[SampledConfig]:
    """Latin-hypercube sample of depth, parameter budget, learning rate and horizon schedule."""
    if n < 1:
        raise ValueError("n must be >= 1")
    units = qmc.LatinHypercube(d=len(LHS_DIMS), seed=seed).random(n)
    n_in = n_state + 1 + n_param
    out = []
    for i, u in enumerate(units):
        depth = _stratum(u[0], 1, 10)
        budget = 100.0 + 2400.0 * u[1]
        widths = solve_widths(budget, depth, n_in, n_state)
        cfg = replace(
            base,
            lr=5.0 * 10.0 ** (-5.0 + 4.0 * u[2]),
            initial_horizon=_stratum(u[3], 2, 50),
            horizon_interval=_stratum(u[4], 1, 10),
            seed=seed * 1000 + i,
        )
        out.append(SampledConfig(cfg, MlpSpec(n_state, n_param, widths),
                                 tuple(float(x) for x in u), int(round(budget))))
    return out
