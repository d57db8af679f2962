"""Prebuilt models.

Flash models share one Hilbert space and their jump operators depend
only on the label of the flash, so the record of past flashes never
enters the dynamics.  :class:`ReducedModel` keeps exactly that data and
:func:`as_event_model` turns it into a single-sector :class:`EventModel`
whose self-channels carry the labels.  :func:`sequence_model` and
:func:`counter_model` build explicit multi-sector versions of the same
dynamics; they exist to cross-check the reduction.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .likelihood import EventHistory, HistoryStep
from .lindblad import DirectSumDensity, lindblad_rhs
from .model import EventModel, ModelError, SectorSpec, as_provider

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
SIGMA_MINUS = np.array([[0, 1], [0, 0]], dtype=complex)


@dataclass
class ReducedModel:
    """One Hilbert space of dimension ``dim``, a Hamiltonian and labelled jump operators."""

    dim: int
    hamiltonian: object
    jumps: dict
    name: str = ""

    def __post_init__(self):
        if not self.jumps:
            raise ModelError("a reduced model needs at least one jump label")
        self.hamiltonian = as_provider(self.hamiltonian)
        self.jumps = {str(k): as_provider(v) for k, v in self.jumps.items()}
        for k, p in self.jumps.items():
            if p.shape != (self.dim, self.dim):
                raise ModelError(f"jump {k!r} has shape {p.shape}, expected ({self.dim}, {self.dim})")

    @property
    def labels(self) -> list[str]:
        return list(self.jumps)


def as_event_model(r: ReducedModel) -> EventModel:
    """Single sector; every flash is a self-channel carrying its label."""
    return EventModel(
        [SectorSpec(0, r.dim, r.name)],
        {0: r.hamiltonian},
        [(0, 0, p, lab) for lab, p in r.jumps.items()],
        name=r.name,
        sequence_reduced=True,
    )


def counter_model(r: ReducedModel, modulus: int = 2) -> EventModel:
    """Sectors count flashes modulo ``modulus``; summing them recovers the reduced density."""
    if modulus < 2:
        raise ValueError("modulus must be at least 2")
    secs = [SectorSpec(k, r.dim, f"count%{modulus}={k}") for k in range(modulus)]
    jumps = [(k, (k + 1) % modulus, p, lab) for k in range(modulus) for lab, p in r.jumps.items()]
    return EventModel(secs, {k: r.hamiltonian for k in range(modulus)}, jumps,
                      name=f"{r.name}-counter{modulus}")


@dataclass
class SequenceEmbedding:
    """Explicit model whose sectors are the flash sequences of length ``<= depth``."""

    model: EventModel
    ids: dict  # tuple of labels -> sector id
    depth: int

    def history(self, h: EventHistory) -> EventHistory:
        """Translate a reduced-model history (labels on sector 0) into sector ids."""
        seq: tuple = ()
        steps = []
        for st in h.steps:
            if st.label is None:
                raise ValueError("reduced histories must label every event")
            seq = seq + (st.label,)
            if seq not in self.ids:
                raise ValueError(f"history longer than the embedding depth {self.depth}")
            steps.append(HistoryStep(self.ids[seq], st.t))
        return EventHistory(self.ids[()], h.t0, steps, h.t_end)


def sequence_model(r: ReducedModel, depth: int) -> SequenceEmbedding:
    """Sectors for every label sequence up to ``depth``; sequence ``s`` jumps to ``s + (e,)`` with ``G_e``.

    Sectors at full depth have no outgoing channels, so densities of at
    most ``depth`` events agree with the reduced model.
    """
    if depth < 0:
        raise ValueError("depth must be non-negative")
    seqs = [s for n in range(depth + 1) for s in itertools.product(r.labels, repeat=n)]
    ids = {s: i for i, s in enumerate(seqs)}
    secs = [SectorSpec(i, r.dim, ",".join(s)) for s, i in ids.items()]
    jumps = [(ids[s], ids[s + (lab,)], r.jumps[lab], lab)
             for s in seqs if len(s) < depth for lab in r.labels]
    m = EventModel(secs, {i: r.hamiltonian for i in ids.values()}, jumps, name=f"{r.name}-seq{depth}")
    return SequenceEmbedding(m, ids, depth)


# -- lattice flash models ---------------------------------------------------------


@dataclass(frozen=True)
class GrwLatticeConfig:
    """Periodic ring of ``M`` sites with spacing ``a``.

    ``initial`` is ``"uniform"``, ``"site:k"`` or an amplitude list.
    """

    M: int = 8
    a: float = 1.0
    sigma: float = 1.0
    lam: float = 1.0
    J: float = 1.0
    initial: object = "uniform"

    def check(self) -> None:
        bad = []
        if int(self.M) != self.M or self.M < 4:
            bad.append(f"M must be an integer >= 4, got {self.M}")
        for k in ("a", "sigma", "lam"):
            if not getattr(self, k) > 0:
                bad.append(f"{k} must be positive, got {getattr(self, k)}")
        if not np.isfinite(self.J):
            bad.append("J must be finite")
        if bad:
            raise ModelError("; ".join(bad))


def ring_distance(M: int, a: float = 1.0) -> np.ndarray:
    """Matrix of shortest distances between ring sites."""
    i = np.arange(M)
    d = np.abs(i[:, None] - i[None, :])
    return a * np.minimum(d, M - d)


def shift(M: int) -> np.ndarray:
    """Cyclic shift ``|x> -> |x+1>``."""
    return np.roll(np.eye(M, dtype=complex), 1, axis=0)


def hopping(M: int, J: float) -> np.ndarray:
    s = shift(M)
    return -J * (s + s.T)


def collapse_profiles(c: GrwLatticeConfig) -> np.ndarray:
    """Rows ``sqrt(lam / Z) * g_a(x)`` so that ``sum_a`` of their squares is ``lam``."""
    g = np.exp(-ring_distance(c.M, c.a) ** 2 / (4 * c.sigma ** 2))
    z = np.sum(g[:, 0] ** 2)  # same for every site on the ring
    return np.sqrt(c.lam / z) * g


def site_label(a: int) -> str:
    return f"x{a}"


def grw_initial_state(c: GrwLatticeConfig) -> np.ndarray:
    if isinstance(c.initial, str):
        if c.initial == "uniform":
            psi = np.ones(c.M, dtype=complex)
        elif c.initial.startswith("site:"):
            psi = np.zeros(c.M, dtype=complex)
            psi[int(c.initial[5:]) % c.M] = 1.0
        else:
            raise ModelError(f"unknown initial state {c.initial!r}")
    else:
        psi = np.asarray(c.initial, dtype=complex)
        if psi.shape != (c.M,):
            raise ModelError(f"initial state must have length {c.M}")
    n = np.linalg.norm(psi)
    if n == 0:
        raise ModelError("initial state is zero")
    return psi / n


def build_grw_lattice(c: GrwLatticeConfig) -> ReducedModel:
    """Gaussian flash operators on a ring with hopping Hamiltonian."""
    c.check()
    prof = collapse_profiles(c)
    jumps = {site_label(a): np.diag(prof[a]).astype(complex) for a in range(c.M)}
    return ReducedModel(c.M, hopping(c.M, c.J), jumps, name=f"grw_lattice(M={c.M})")


def kinetic(M: int) -> np.ndarray:
    """Dimensionless lattice kinetic operator ``2 - S - S^dagger`` (spectrum in [0, 4])."""
    s = shift(M)
    return 2 * np.eye(M) - s - s.T


def build_momentum_weighted(c: GrwLatticeConfig, mu: float = 1.0) -> ReducedModel:
    """Flash model whose total rate grows with kinetic energy.

    Besides the position flashes of :func:`build_grw_lattice` every site
    carries a second channel ``sqrt(mu) * {g_a, K}/2`` (``K`` from
    :func:`kinetic`, ``g_a`` the normalized profile).  These operators
    are Hermitian but not positive.  Their contribution to the total rate
    is small on smooth states and grows as flashes localize the state.
    """
    c.check()
    if not mu > 0:
        raise ModelError("mu must be positive")
    base = build_grw_lattice(c)
    prof = collapse_profiles(c) / np.sqrt(c.lam)
    k = kinetic(c.M)
    jumps = dict(base.jumps)
    for a in range(c.M):
        g = np.diag(prof[a])
        jumps[f"p{a}"] = np.sqrt(mu) * 0.5 * (g @ k + k @ g)
    return ReducedModel(c.M, base.hamiltonian, jumps, name=f"momentum_weighted(M={c.M})")


# -- spin models ------------------------------------------------------------------


def spin_projector(axis, sharpness: float = 1.0) -> np.ndarray:
    """``(1 + s n.sigma)/2``; ``s = 1`` is the projector onto spin up along ``n``."""
    n = np.asarray(axis, dtype=float)
    return 0.5 * (np.eye(2) + sharpness * (n[0] * SIGMA_X + n[1] * SIGMA_Y + n[2] * SIGMA_Z))


def build_noncommuting_spin(rates, axes, sharpness: float = 1.0, field=(0.0, 0.0, 0.0)) -> ReducedModel:
    """Qubit flashed by spin projectors along several axes.

    ``G_k = sqrt(rate_k) * spin_projector(axis_k, sharpness)``.  Axes are
    normalized.  ``sharpness < 1`` gives unsharp effects whose repeated
    application scatters the state over the Bloch sphere instead of
    resetting it; ``field`` adds ``H = field . sigma / 2``.
    """
    rates = [float(r) for r in rates]
    axes = [np.asarray(a, dtype=float) for a in axes]
    if len(axes) < 2 or len(rates) != len(axes):
        raise ModelError("need at least two axes and one rate per axis")
    if any(r <= 0 for r in rates):
        raise ModelError("rates must be positive")
    if not 0 < sharpness <= 1:
        raise ModelError("sharpness must lie in (0, 1]")
    units = []
    for a in axes:
        if a.shape != (3,) or not np.linalg.norm(a) > 0:
            raise ModelError("axes must be non-zero 3-vectors")
        units.append(a / np.linalg.norm(a))
    if all(np.linalg.norm(np.cross(units[0], u)) < 1e-12 for u in units[1:]):
        raise ModelError("degenerate axes: all parallel, so the jump operators commute")
    ops = {f"n{k}": np.sqrt(r) * spin_projector(u, sharpness) for k, (r, u) in enumerate(zip(rates, units))}
    comm = max(np.linalg.norm(a @ b - b @ a, 2) for a, b in itertools.combinations(ops.values(), 2))
    assert comm > 0, "jump operators commute"
    fx, fy, fz = field
    h = 0.5 * (fx * SIGMA_X + fy * SIGMA_Y + fz * SIGMA_Z)
    return ReducedModel(2, h, ops, name="noncommuting_spin")


def bloch_vector(psi) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    psi = psi / np.linalg.norm(psi)
    return np.array([np.vdot(psi, s @ psi).real for s in (SIGMA_X, SIGMA_Y, SIGMA_Z)])


# -- energy bookkeeping -----------------------------------------------------------


@dataclass
class EnergyProbe:
    """Energy observable of a single-sector model."""

    model: EventModel
    h: np.ndarray

    def energy(self, psi) -> float:
        psi = np.asarray(psi, dtype=complex)
        return float(np.vdot(psi, self.h @ psi).real / np.vdot(psi, psi).real)

    def density_energy(self, rho: DirectSumDensity) -> float:
        return rho.expectation({0: self.h})

    def lindblad_rate(self, rho: DirectSumDensity, t: float = 0.0) -> float:
        """Predicted ``d<H>/dt = tr(H L(rho))``."""
        return lindblad_rhs(self.model, rho, t).expectation({0: self.h})

    def event_energies(self, trajectory) -> np.ndarray:
        """Energy right after each event (needs state snapshots)."""
        out = []
        for ev in trajectory.events:
            if ev.state is None:
                raise ValueError("trajectory was run without state snapshots")
            out.append(self.energy(ev.state))
        return np.array(out)


def build_energy_probe(c: GrwLatticeConfig, reduced: ReducedModel | None = None) -> EnergyProbe:
    r = reduced if reduced is not None else build_grw_lattice(c)
    return EnergyProbe(as_event_model(r), hopping(c.M, c.J))


# -- small models -----------------------------------------------------------------


def two_sector_scalar(g=1.0) -> EventModel:
    """Scalar sector 0 decaying into sector ``k`` with amplitude ``g[k-1]``; targets absorb."""
    gs = [float(g)] if np.ndim(g) == 0 else [float(x) for x in g]
    secs = [SectorSpec(0, 1, "ready")] + [SectorSpec(k, 1, f"fired{k}") for k in range(1, len(gs) + 1)]
    jumps = [(0, k, [[x]]) for k, x in enumerate(gs, 1)]
    return EventModel(secs, {}, jumps, name="two_sector_scalar")


def driven_qubit(omega: float = 1.0, gamma: float = 1.0) -> ReducedModel:
    """``H = omega sigma_x / 2`` with one decay channel ``sqrt(gamma) sigma_minus``."""
    return ReducedModel(2, 0.5 * omega * SIGMA_X, {"decay": np.sqrt(gamma) * SIGMA_MINUS}, name="driven_qubit")


@dataclass
class Builtin:
    """A named model together with its default initial condition."""

    model: EventModel
    init: tuple
    reduced: ReducedModel | None = None
    extras: dict = field(default_factory=dict)


def _grw_config(p: dict) -> GrwLatticeConfig:
    keys = {"M": "M", "a": "a", "sigma": "sigma", "lambda": "lam", "lam": "lam", "J": "J", "initial": "initial"}
    kw = {}
    for k, v in p.items():
        if k not in keys:
            raise ModelError(f"unknown lattice parameter {k!r}")
        kw[keys[k]] = v
    return GrwLatticeConfig(**kw)


def _b_grw(p):
    p = dict(p)
    c = _grw_config(p)
    r = build_grw_lattice(c)
    return Builtin(as_event_model(r), (0, grw_initial_state(c)), r, {"config": c})


def _b_momentum(p):
    p = dict(p)
    mu = float(p.pop("mu", 1.0))
    c = _grw_config(p)
    r = build_momentum_weighted(c, mu)
    return Builtin(as_event_model(r), (0, grw_initial_state(c)), r, {"config": c})


def _b_scalar(p):
    p = dict(p)
    g = p.pop("g", 1.0)
    if p:
        raise ModelError(f"unknown parameters {sorted(p)}")
    return Builtin(two_sector_scalar(g), (0, np.array([1.0 + 0j])))


def _b_spin(p):
    p = dict(p)
    rates = p.pop("rates", [1.0, 1.0])
    axes = p.pop("axes", [[1, 0, 0], [0, 0, 1]])
    sharp = float(p.pop("sharpness", 1.0))
    fld = p.pop("field", [0.0, 0.0, 0.0])
    init = p.pop("initial", [1.0, 0.0])
    if p:
        raise ModelError(f"unknown parameters {sorted(p)}")
    r = build_noncommuting_spin(rates, axes, sharp, fld)
    psi = np.asarray(init, dtype=complex)
    return Builtin(as_event_model(r), (0, psi / np.linalg.norm(psi)), r)


def _b_qubit(p):
    p = dict(p)
    r = driven_qubit(float(p.pop("omega", 1.0)), float(p.pop("gamma", 1.0)))
    if p:
        raise ModelError(f"unknown parameters {sorted(p)}")
    return Builtin(as_event_model(r), (0, np.array([1.0, 0.0], dtype=complex)), r)


BUILTINS: dict[str, Callable[[dict], Builtin]] = {
    "grw_lattice": _b_grw,
    "two_sector_scalar": _b_scalar,
    "noncommuting_spin": _b_spin,
    "momentum_weighted": _b_momentum,
    "driven_qubit": _b_qubit,
}


def builtin(name: str, params: dict | None = None) -> Builtin:
    try:
        make = BUILTINS[name]
    except KeyError:
        raise ModelError(f"unknown builtin {name!r}; choose from {sorted(BUILTINS)}") from None
    try:
        return make(params or {})
    except TypeError as exc:
        raise ModelError(f"bad parameters for {name}: {exc}") from None
