"""Binary factor graphs for joint inference over link and relation variables.

A model couples indicator variables (does this link hold, does this
segment express the relation) through nonnegative potential tables.
Posterior marginals come from one of two routes chosen by ``e_step``:
exact enumeration when the graph is small or cyclic enough to demand
it, sum-product belief propagation otherwise. On acyclic graphs BP is
exact; on loopy ones the messages are damped and run to a fixed point.

``mean_field_update`` provides the coordinate-ascent alternative used
when a fully factored posterior is wanted. Zero potentials are handled
in extended reals with the 0 * log(0) = 0 convention.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

ENUMERATION_LIMIT = 12   # cyclic graphs up to this many variables get exact
HARD_ENUMERATION_CAP = 20


class FactorGraphError(ValueError):
    pass


class InconsistencyError(FactorGraphError):
    """The potentials admit no assignment with positive weight."""

    def __init__(self, critical_factors=()):
        self.critical_factors = tuple(critical_factors)
        detail = ", ".join(self.critical_factors) if self.critical_factors \
            else "unknown"
        super().__init__(
            "model admits no satisfying assignment; "
            f"critical factors: {detail}")


@dataclass(frozen=True)
class Factor:
    """A nonnegative potential over an ordered tuple of binary variables."""

    name: str
    vars: tuple
    table: np.ndarray

    def __post_init__(self):
        tab = np.asarray(self.table, dtype=np.float64)
        object.__setattr__(self, "table", tab)
        if tab.shape != (2,) * len(self.vars):
            raise FactorGraphError(
                f"factor {self.name!r}: table shape {tab.shape} does not "
                f"match {len(self.vars)} binary variables")
        if len(set(self.vars)) != len(self.vars):
            raise FactorGraphError(f"factor {self.name!r} repeats a variable")
        if (tab < 0).any() or not np.isfinite(tab).all():
            raise FactorGraphError(
                f"factor {self.name!r} has negative or non-finite entries")


class FactorGraph:
    def __init__(self):
        self.variables: list[str] = []
        self._var_set: set[str] = set()
        self.factors: list[Factor] = []

    def add_variable(self, name: str) -> None:
        if name in self._var_set:
            raise FactorGraphError(f"duplicate variable {name!r}")
        self.variables.append(name)
        self._var_set.add(name)

    def add_factor(self, factor: Factor) -> None:
        for v in factor.vars:
            if v not in self._var_set:
                raise FactorGraphError(
                    f"factor {factor.name!r} references unknown variable {v!r}")
        if any(f.name == factor.name for f in self.factors):
            raise FactorGraphError(f"duplicate factor name {factor.name!r}")
        self.factors.append(factor)

    def neighbors(self, var: str) -> list[int]:
        return [i for i, f in enumerate(self.factors) if var in f.vars]

    def is_acyclic(self) -> bool:
        """True when the bipartite variable-factor graph has no cycle."""
        parent: dict[str, str] = {}

        def find(x):
            while parent.setdefault(x, x) != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for i, f in enumerate(self.factors):
            fnode = f"__f{i}"
            for v in f.vars:
                ra, rb = find(fnode), find(f"v:{v}")
                if ra == rb:
                    return False
                parent[ra] = rb
        return True


@dataclass
class Marginals:
    probs: dict
    method: str
    converged: bool = True
    iterations: int = 0

    def __getitem__(self, var):
        return self.probs[var]


def _assignment_weight(graph: FactorGraph, assignment: dict) -> float:
    w = 1.0
    for f in graph.factors:
        w *= f.table[tuple(assignment[v] for v in f.vars)]
        if w == 0.0:
            return 0.0
    return w


def _critical_factors(graph: FactorGraph) -> list[str]:
    """Factors whose individual removal restores a satisfiable model."""
    names = []
    for skip in range(len(graph.factors)):
        z = 0.0
        kept = [f for i, f in enumerate(graph.factors) if i != skip]
        sub = FactorGraph()
        for v in graph.variables:
            sub.add_variable(v)
        for f in kept:
            sub.add_factor(f)
        for bits in itertools.product((0, 1), repeat=len(graph.variables)):
            z += _assignment_weight(sub, dict(zip(graph.variables, bits)))
            if z > 0.0:
                break
        if z > 0.0:
            names.append(graph.factors[skip].name)
    if not names:
        names = [f.name for f in graph.factors]
    return names


def exact_marginals(graph: FactorGraph) -> Marginals:
    """Marginals by full enumeration of the 2^n assignments."""
    n = len(graph.variables)
    if n > HARD_ENUMERATION_CAP:
        raise FactorGraphError(
            f"enumeration over {n} variables refused (cap "
            f"{HARD_ENUMERATION_CAP})")
    z = 0.0
    ones = {v: 0.0 for v in graph.variables}
    for bits in itertools.product((0, 1), repeat=n):
        assignment = dict(zip(graph.variables, bits))
        w = _assignment_weight(graph, assignment)
        if w == 0.0:
            continue
        z += w
        for v, bit in assignment.items():
            if bit:
                ones[v] += w
    if z == 0.0:
        raise InconsistencyError(_critical_factors(graph))
    return Marginals(probs={v: ones[v] / z for v in graph.variables},
                     method="enumeration")


def loopy_bp(graph: FactorGraph, damping: float = 0.5, max_iters: int = 100,
             tol: float = 1e-9) -> Marginals:
    """Synchronous sum-product message passing with damping.

    Exact on acyclic graphs (pass damping=0 there for fastest settling);
    a damped fixed-point approximation on loopy ones. Messages are
    normalized every round; a variable whose incoming messages leave it
    no probability mass signals an unsatisfiable model.
    """
    nf = len(graph.factors)
    msg_vf = {}   # (var, fi) -> np.array([m0, m1])
    msg_fv = {}   # (fi, var) -> np.array([m0, m1])
    for fi, f in enumerate(graph.factors):
        for v in f.vars:
            msg_vf[(v, fi)] = np.array([0.5, 0.5])
            msg_fv[(fi, v)] = np.array([0.5, 0.5])

    var_factors = {v: [] for v in graph.variables}
    for fi, f in enumerate(graph.factors):
        for v in f.vars:
            var_factors[v].append(fi)

    converged = False
    iterations = 0
    for it in range(max_iters):
        iterations = it + 1
        new_fv = {}
        for fi, f in enumerate(graph.factors):
            k = len(f.vars)
            for pos, v in enumerate(f.vars):
                out = np.zeros(2)
                for bits in itertools.product((0, 1), repeat=k):
                    w = f.table[bits]
                    if w == 0.0:
                        continue
                    for p2, u in enumerate(f.vars):
                        if p2 != pos:
                            w *= msg_vf[(u, fi)][bits[p2]]
                    out[bits[pos]] += w
                total = out.sum()
                if total > 0.0:
                    out = out / total
                new_fv[(fi, v)] = out
        new_vf = {}
        for v in graph.variables:
            for fi in var_factors[v]:
                out = np.ones(2)
                for gi in var_factors[v]:
                    if gi != fi:
                        out = out * new_fv[(gi, v)]
                total = out.sum()
                if total > 0.0:
                    out = out / total
                new_vf[(v, fi)] = out
        delta = 0.0
        for key, val in new_fv.items():
            mixed = damping * msg_fv[key] + (1 - damping) * val
            delta = max(delta, float(np.max(np.abs(mixed - msg_fv[key]))))
            msg_fv[key] = mixed
        for key, val in new_vf.items():
            mixed = damping * msg_vf[key] + (1 - damping) * val
            delta = max(delta, float(np.max(np.abs(mixed - msg_vf[key]))))
            msg_vf[key] = mixed
        if delta < tol:
            converged = True
            break

    probs = {}
    dead = False
    for v in graph.variables:
        belief = np.ones(2)
        for fi in var_factors[v]:
            belief = belief * msg_fv[(fi, v)]
        total = belief.sum()
        if total == 0.0:
            dead = True
            probs[v] = 0.0
        else:
            probs[v] = float(belief[1] / total)
    if dead:
        if len(graph.variables) <= HARD_ENUMERATION_CAP:
            exact_marginals(graph)  # raises with named critical factors
        raise InconsistencyError()
    return Marginals(probs=probs, method="bp", converged=converged,
                     iterations=iterations)


def e_step(graph: FactorGraph, damping: float = 0.5, max_iters: int = 100,
           tol: float = 1e-9) -> Marginals:
    """Posterior marginals with the route picked by graph shape.

    Acyclic graphs take undamped sum-product, which is exact there.
    Cyclic graphs small enough to enumerate are enumerated, so the
    answer stays exact where exactness is promised. Everything else
    runs damped synchronous BP.
    """
    if not graph.variables:
        return Marginals(probs={}, method="enumeration")
    if graph.is_acyclic():
        return loopy_bp(graph, damping=0.0, max_iters=max_iters, tol=tol)
    if len(graph.variables) <= ENUMERATION_LIMIT:
        return exact_marginals(graph)
    return loopy_bp(graph, damping=damping, max_iters=max_iters, tol=tol)


# -- mean field ---------------------------------------------------------------


def _expected_log_potential(f: Factor, q: dict, pin_var=None, pin_val=None):
    """E_q[log psi] with other variables integrated out.

    Terms whose assignment probability is zero contribute nothing even
    when the potential there is zero (0 * -inf = 0). A positive-weight
    zero-potential assignment makes the expectation -inf.
    """
    total = 0.0
    for bits in itertools.product((0, 1), repeat=len(f.vars)):
        weight = 1.0
        for pos, v in enumerate(f.vars):
            if v == pin_var:
                if bits[pos] != pin_val:
                    weight = 0.0
                    break
                continue
            weight *= q[v] if bits[pos] else 1.0 - q[v]
        if weight == 0.0:
            continue
        p = f.table[bits]
        if p == 0.0:
            return -math.inf
        total += weight * math.log(p)
    return total


def mean_field_update(graph: FactorGraph, q: dict, var: str) -> dict:
    """One coordinate-ascent update of the factored posterior.

    Returns a new q with q[var] set to its optimum given the other
    coordinates: sigma of the expected log-potential gap between the
    variable's two states.
    """
    if var not in q:
        raise FactorGraphError(f"unknown variable {var!r}")
    s = []
    for val in (0, 1):
        acc = 0.0
        for fi in graph.neighbors(var):
            f = graph.factors[fi]
            term = _expected_log_potential(f, q, pin_var=var, pin_val=val)
            if term == -math.inf:
                acc = -math.inf
                break
            acc += term
        s.append(acc)
    out = dict(q)
    if s[0] == -math.inf and s[1] == -math.inf:
        raise InconsistencyError([graph.factors[fi].name
                                  for fi in graph.neighbors(var)])
    if s[0] == -math.inf:
        out[var] = 1.0
    elif s[1] == -math.inf:
        out[var] = 0.0
    else:
        gap = s[1] - s[0]
        out[var] = 1.0 / (1.0 + math.exp(-gap)) if gap > -700 else 0.0
    return out


def elbo(graph: FactorGraph, q: dict) -> float:
    """Evidence lower bound of a factored posterior (up to log Z)."""
    total = 0.0
    for f in graph.factors:
        term = _expected_log_potential(f, q)
        if term == -math.inf:
            return -math.inf
        total += term
    for v in graph.variables:
        p = q[v]
        for val in (p, 1.0 - p):
            if val > 0.0:
                total -= val * math.log(val)
    return total
