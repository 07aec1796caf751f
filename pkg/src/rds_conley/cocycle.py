"""Random dynamical systems as numerical cocycles over noise samples.

States are integrated with a fixed step equal to the noise ``dt``, so
``phi(s+t, w) = phi(t, theta_s w) o phi(s, w)`` holds bit-exactly on grid
times: composing two runs replays exactly the same floating point steps.

Step rules (``h = +dt`` forward, ``h = -dt`` backward; ``w`` is the
noise increment of the interval being crossed, negated when crossing it
backwards):

* ``double_well``: the drift-proportional noise makes the equation a
  random time change of ``x' = x - x^3``.  One step is an RK4 step of the
  autonomous field over the random duration ``h + sigma_n * w``.
* ``random_lorenz``: random ODE, parameters frozen at the noise state of
  the interval, RK4 step of length ``h``.
* ``custom``: ``x + RK4(f, x, h) + g w + 0.5 (Dg g) w^2`` (Stratonovich,
  single Wiener channel).  Drift may read the noise state ``xi`` when the
  driving noise is ``ou`` or ``constant``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .expr import Expression
from .noise import NoiseSample, steps_for

SYSTEM_KINDS = ("double_well", "random_lorenz", "custom")

LORENZ_DEFAULTS = {
    "sigma0": 0.9, "sigma_amp": 0.05,
    "rho0": 0.4, "rho_amp": 0.1,
    "beta0": 1.0, "beta_amp": 0.2,
}


class SystemDefError(ValueError):
    pass


class BlowupError(ArithmeticError):
    """The integrated state stopped being finite."""

    def __init__(self, time, detail=""):
        self.time = time
        msg = f"non-finite state at t={time:g}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class LorenzParameterError(ValueError):
    pass


@dataclass(frozen=True)
class SystemDef:
    kind: str
    dim: int
    window_lo: tuple
    window_hi: tuple
    params: dict = field(default_factory=dict)
    drift: tuple = ()
    diffusion: tuple = ()
    variables: tuple = ()
    stationary: tuple = ()
    time_sign: int = 1

    def __post_init__(self):
        if self.kind not in SYSTEM_KINDS:
            raise SystemDefError(f"unknown system kind {self.kind!r}")
        if len(self.window_lo) != self.dim or len(self.window_hi) != self.dim:
            raise SystemDefError("window does not match the state dimension")
        for a, b in zip(self.window_lo, self.window_hi):
            if not b > a:
                raise SystemDefError("window sides must have positive length")

    @property
    def lo(self):
        return np.asarray(self.window_lo, dtype=float)

    @property
    def hi(self):
        return np.asarray(self.window_hi, dtype=float)

    @property
    def noise_channels(self):
        return 3 if self.kind == "random_lorenz" else max(1, _custom_channels(self))

    def reversed(self):
        """The time-reversed system.

        Stepping it forward over ``sample.reflect()`` replays the original
        backward steps exactly.
        """
        return replace(self, time_sign=-self.time_sign)

    def stationary_points(self):
        return np.array(self.stationary, dtype=float).reshape(-1, self.dim)


def _custom_channels(system):
    if system.kind != "custom":
        return 1
    used = set()
    for e in system.drift:
        used |= _noise_names(e)
    n = 1
    for name in used:
        if name != "xi":
            n = max(n, int(name[2:]) + 1)
    return n


def _noise_names(expression):
    from .expr import names
    return {n for n in names(expression.tree) if n == "xi" or (n.startswith("xi") and n[2:].isdigit())}


def double_well(sigma_n=0.1, window=(-2.0, 2.0)):
    return SystemDef(
        "double_well", 1, (float(window[0]),), (float(window[1]),),
        params={"sigma_n": float(sigma_n)},
        stationary=((-1.0,), (0.0,), (1.0,)),
    )


def random_lorenz(window=(-3.0, 3.0), **params):
    p = dict(LORENZ_DEFAULTS)
    unknown = set(params) - set(p)
    if unknown:
        raise SystemDefError(f"unknown Lorenz parameter(s) {sorted(unknown)}")
    p.update({k: float(v) for k, v in params.items()})
    # tanh lies in (-1, 1), so these bounds hold for every noise value
    if not (p["rho0"] + p["rho_amp"] <= p["sigma0"] - p["sigma_amp"]
            and p["sigma0"] + p["sigma_amp"] <= 1.0
            and p["beta0"] - p["beta_amp"] > 0.0
            and min(p["sigma_amp"], p["rho_amp"], p["beta_amp"]) >= 0.0):
        raise LorenzParameterError(
            "Lorenz parameters must guarantee rho < sigma <= 1 and beta > 0 for all noise values"
        )
    lo, hi = float(window[0]), float(window[1])
    return SystemDef(
        "random_lorenz", 3, (lo,) * 3, (hi,) * 3, params=p, stationary=((0.0, 0.0, 0.0),),
    )


def custom_system(drift, diffusion=None, window_lo=None, window_hi=None, params=None,
                  variables=None, stationary=()):
    """Build a system from expression strings, one per state variable."""
    dim = len(drift)
    if variables is None:
        variables = ("x", "y", "z")[:dim] if dim <= 3 else tuple(f"x{i}" for i in range(dim))
    variables = tuple(variables)
    if len(variables) != dim:
        raise SystemDefError("one variable name per drift component is required")
    params = {k: float(v) for k, v in (params or {}).items()}
    clash = set(params) & set(variables)
    if clash:
        raise SystemDefError(f"names used both as variable and parameter: {sorted(clash)}")
    allowed = set(variables) | set(params) | {"xi"} | {f"xi{i}" for i in range(16)}
    drift_e = tuple(Expression(s, allowed) for s in drift)
    diff_e = ()
    if diffusion is not None:
        if len(diffusion) != dim:
            raise SystemDefError("one diffusion component per state variable is required")
        diff_allowed = set(variables) | set(params)
        diff_e = tuple(Expression(s, diff_allowed) for s in diffusion)
    return SystemDef(
        "custom", dim, tuple(float(v) for v in window_lo), tuple(float(v) for v in window_hi),
        params=params, drift=drift_e, diffusion=diff_e, variables=variables,
        stationary=tuple(tuple(float(c) for c in p) for p in stationary),
    )


def lorenz_parameters(system, v):
    """Realized (sigma, rho, beta) for one noise state ``v`` (3 channels)."""
    p = system.params
    sigma = p["sigma0"] + p["sigma_amp"] * math.tanh(float(v[0]))
    rho = p["rho0"] + p["rho_amp"] * math.tanh(float(v[1]))
    beta = p["beta0"] + p["beta_amp"] * math.tanh(float(v[2]))
    return sigma, rho, beta


def lorenz_dissipation_rate(state, sigma, rho, beta):
    """Quadratic upper bound for d/dt (x^2 + y^2 + z^2) along the Lorenz field.

    Equals the exact derivative plus ``(sigma + rho) (x - y)^2``.
    """
    if not (rho < sigma <= 1.0 and beta > 0.0):
        raise LorenzParameterError(f"need rho < sigma <= 1 and beta > 0, got {sigma=}, {rho=}, {beta=}")
    s = np.asarray(state, dtype=float)
    x, y, z = s[..., 0], s[..., 1], s[..., 2]
    return -(sigma - rho) * x * x - (2.0 - rho - sigma) * y * y - 2.0 * beta * z * z


def lorenz_field(state, sigma, rho, beta):
    s = np.asarray(state, dtype=float)
    x, y, z = s[..., 0], s[..., 1], s[..., 2]
    return np.stack([sigma * (y - x), rho * x - y - x * z, x * y - beta * z], axis=-1)


def double_well_exact(x0, t):
    """Closed-form solution of x' = x - x^3."""
    x0 = np.asarray(x0, dtype=float)
    return x0 / np.sqrt(x0 * x0 + (1.0 - x0 * x0) * np.exp(-2.0 * t))


# ---------------------------------------------------------------- stepping
# Internal state layout is (dim, m): one row per coordinate.

def _rk4(f, x, h):
    k1 = f(x)
    k2 = f(x + (0.5 * h) * k1)
    k3 = f(x + (0.5 * h) * k2)
    k4 = f(x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _dw_field(x):
    return x - x * x * x


def _lorenz_rows(sigma, rho, beta):
    def f(s):
        x, y, z = s[0], s[1], s[2]
        out = np.empty_like(s)
        out[0] = sigma * (y - x)
        out[1] = rho * x - y - x * z
        out[2] = x * y - beta * z
        return out
    return f


def _custom_env(system, s, v):
    env = dict(system.params)
    for name, row in zip(system.variables, s):
        env[name] = row
    if v is not None:
        env["xi"] = float(v[0])
        for i, val in enumerate(v):
            env[f"xi{i}"] = float(val)
    return env


def _custom_drift(system, v):
    def f(s):
        env = _custom_env(system, s, v)
        return np.stack([np.broadcast_to(np.asarray(e(env), dtype=float), s.shape[1:]) for e in system.drift])
    return f


def _custom_diffusion(system, s):
    env = _custom_env(system, s, None)
    return np.stack([np.broadcast_to(np.asarray(e(env), dtype=float), s.shape[1:]) for e in system.diffusion])


class _Stepper:
    """Precomputes per-sample constants and applies single steps."""

    def __init__(self, system: SystemDef, sample: NoiseSample):
        self.system = system
        self.sample = sample
        self.dt = sample.dt
        if system.kind == "random_lorenz":
            if sample.kind == "wiener":
                raise SystemDefError("random_lorenz needs ou or constant noise")
            if sample.channels < 3:
                raise SystemDefError("random_lorenz needs 3 noise channels")
        elif system.kind == "double_well":
            if sample.kind == "ou":
                raise SystemDefError("double_well is driven by wiener or constant noise")
        else:
            uses_xi = any(_noise_names(e) for e in system.drift)
            if uses_xi and sample.kind == "wiener":
                raise SystemDefError("drift reads the noise state xi, which needs ou or constant noise")
            if system.diffusion and sample.kind == "ou":
                raise SystemDefError("diffusion terms need wiener or constant noise")
            if sample.channels < system.noise_channels:
                raise SystemDefError(f"system needs {system.noise_channels} noise channels")

    def step(self, s, k, direction):
        """Advance ``s`` across interval ``k`` (forward) or ``k-1`` (backward)."""
        system = self.system
        if direction > 0:
            v = self.sample.window(k, 1)[0]
            h = self.dt
            w = v
        else:
            v = self.sample.window(k - 1, 1)[0]
            h = -self.dt
            w = -v
        if system.time_sign < 0:
            h = -h
        kind = system.kind
        if kind == "double_well":
            tau = h + system.params["sigma_n"] * float(w[0])
            return _rk4(_dw_field, s, tau)
        if kind == "random_lorenz":
            return _rk4(_lorenz_rows(*lorenz_parameters(system, v)), s, h)
        xi = v if self.sample.kind != "wiener" else None
        out = _rk4(_custom_drift(system, xi), s, h)
        if system.diffusion and self.sample.kind == "wiener":
            dw = float(w[0])
            if dw != 0.0:
                g = _custom_diffusion(system, s)
                eta = 1e-6
                dgg = (_custom_diffusion(system, s + eta * g) - _custom_diffusion(system, s - eta * g)) / (2 * eta)
                out = out + g * dw + 0.5 * dgg * (dw * dw)
        return out


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    sample_id: int
    exited: np.ndarray = None


def integrate(system, sample, states, n_steps, start=0, policy="clamp", record=None, exited=None):
    """Integrate an array of states ``(m, dim)`` for ``n_steps`` steps.

    Negative ``n_steps`` integrates backward in time.  ``start`` is the
    step index (relative to the sample origin) of the initial time.

    ``policy`` decides what happens when a state leaves the window:
    ``"clamp"`` projects it back onto the window face and sets its exit
    flag; ``"free"`` keeps integrating (the grid maps it to the exterior
    box).  ``record``, if given, is called as ``record(j, S)``
    after every step with ``S`` in ``(dim, m)`` layout.

    Returns ``(states, exited)``.
    """
    X = np.asarray(states, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != system.dim:
        raise SystemDefError(f"states must have {system.dim} coordinates")
    s = np.ascontiguousarray(X.T)
    m = s.shape[1]
    ex = np.zeros(m, dtype=bool) if exited is None else np.array(exited, dtype=bool)
    if not np.all(np.isfinite(s)):
        raise BlowupError(start * sample.dt, "initial state")
    stepper = _Stepper(system, sample)
    lo = system.lo[:, None]
    hi = system.hi[:, None]
    direction = 1 if n_steps >= 0 else -1
    k = start
    for j in range(abs(n_steps)):
        new = stepper.step(s, k, direction)
        k += direction
        if policy == "clamp":
            out = np.any((new < lo) | (new > hi), axis=0)
            if out.any():
                new[:, out] = np.clip(new[:, out], lo, hi)
                ex |= out
        if not np.all(np.isfinite(new)):
            bad = np.flatnonzero(~np.all(np.isfinite(new), axis=0))
            err = BlowupError(k * sample.dt, f"{bad.size} state(s), first index {int(bad[0])}")
            err.indices = bad
            raise err
        s = new
        if record is not None:
            record(j + 1, s)
    out = s.T.copy()
    if single:
        return out[0], bool(ex[0])
    return out, ex


def evolve(system, sample, x, t, policy="clamp"):
    """``phi(t, sample) x`` for ``t >= 0`` on the noise grid."""
    n = steps_for(t, sample.dt)
    if n < 0:
        raise ValueError("evolve needs t >= 0; use evolve_backward for negative times")
    return integrate(system, sample, x, n, policy=policy)[0]


def evolve_backward(system, sample, x, t, policy="clamp"):
    """``phi(-t, sample) x`` for ``t >= 0``."""
    n = steps_for(t, sample.dt)
    if n < 0:
        raise ValueError("t must be non-negative")
    return integrate(system, sample, x, -n, policy=policy)[0]


def evolve_pullback(system, sample, x, t, policy="clamp"):
    """``phi(t, theta_{-t} sample) x``: start at time ``-t`` and run to 0."""
    n = steps_for(t, sample.dt)
    if n < 0:
        raise ValueError("t must be non-negative")
    return integrate(system, sample, x, n, start=-n, policy=policy)[0]


def trajectory(system, sample, x, t, every=1, policy="clamp"):
    n = steps_for(t, sample.dt)
    x = np.asarray(x, dtype=float)
    pts = [np.atleast_2d(x).copy()]
    times = [0.0]

    def rec(j, s):
        if j % every == 0 or j == abs(n):
            pts.append(s.T.copy())
            times.append(math.copysign(j * sample.dt, n) if n else 0.0)

    _, ex = integrate(system, sample, x, n, policy=policy, record=rec)
    states = np.stack(pts)
    if x.ndim == 1:
        states = states[:, 0, :]
    return Trajectory(np.array(times), states, sample.seed, np.asarray(ex))
