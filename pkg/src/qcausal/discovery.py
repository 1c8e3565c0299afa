"""Causal discovery from a process operator.

Every ordered pair ``(j, i)`` is tested for signalling: ``j -> i`` is drawn when
the conditional of ``i:in`` given all outputs depends on ``j:out``. The induced
graph is then checked for acyclicity and for the Markov factorization of the
process. Processes whose true structure is hidden by fine-tuning lose arrows here.
"""

from __future__ import annotations

import dataclasses
from typing import Any, Mapping

from . import tolerances
from .errors import InputError
from .graphs import Dag
from .quantum import ProcessOperator, acts_trivially, check_markov, node_conditional
from .tensor_core import LabeledOperator, operator_to_json

# deviations within this factor of the threshold are reported as borderline
BORDERLINE_FACTOR = 10.0

__all__ = ["SignallingTest", "InducedGraph", "simple_induced_graph", "DiscoveryReport", "discover"]


@dataclasses.dataclass(frozen=True)
class SignallingTest:
    source: str
    target: str
    deviation: float
    arrow: bool
    borderline: bool


@dataclasses.dataclass(frozen=True)
class InducedGraph:
    nodes: tuple[str, ...]
    edges: tuple[tuple[str, str], ...]
    tests: tuple[SignallingTest, ...]

    @property
    def borderline(self) -> tuple[SignallingTest, ...]:
        return tuple(t for t in self.tests if t.borderline)

    def is_dag(self) -> bool:
        try:
            Dag(self.nodes, self.edges)
        except InputError:
            return False
        return True


def simple_induced_graph(sigma: ProcessOperator | LabeledOperator) -> InducedGraph:
    """Arrow ``j -> i`` when ``|avg_j(rho_i) - rho_i| / |rho_i|`` exceeds the signalling tolerance.

    ``rho_i`` is the process with every input except ``i:in`` traced out and
    ``avg_j`` replaces its dependence on ``j:out`` by the uniform average.
    """
    if isinstance(sigma, LabeledOperator):
        sigma = ProcessOperator.from_operator(sigma)
    eps = tolerances.current().sig
    tests = []
    edges = []
    for i in sigma.names:
        rho = node_conditional(sigma, i)
        scale = max(rho.norm(), 1e-300)
        for j in sigma.names:
            if j == i:
                continue
            dev = acts_trivially(rho, j) / scale
            arrow = dev > eps
            border = eps / BORDERLINE_FACTOR < dev <= eps * BORDERLINE_FACTOR
            tests.append(SignallingTest(j, i, dev, arrow, border))
            if arrow:
                edges.append((j, i))
    return InducedGraph(tuple(sigma.names), tuple(edges), tuple(tests))


@dataclasses.dataclass(frozen=True)
class DiscoveryReport:
    induced: InducedGraph
    is_dag: bool
    markov: bool | None
    reconstruction_error: float | None
    channels: Mapping[str, LabeledOperator] | None
    failures: tuple[str, ...]

    @property
    def graph(self) -> Dag | None:
        return Dag(self.induced.nodes, self.induced.edges) if self.is_dag else None

    def to_json(self, include_channels: bool = False) -> dict[str, Any]:
        doc: dict[str, Any] = {
            "nodes": list(self.induced.nodes),
            "edges": [list(e) for e in self.induced.edges],
            "is_dag": self.is_dag,
            "markov": self.markov,
            "reconstruction_error": self.reconstruction_error,
            "signalling": [
                {
                    "source": t.source,
                    "target": t.target,
                    "deviation": t.deviation,
                    "arrow": t.arrow,
                    "borderline": t.borderline,
                }
                for t in self.induced.tests
            ],
            "failures": list(self.failures),
        }
        if include_channels and self.channels is not None:
            doc["channels"] = {v: operator_to_json(c) for v, c in self.channels.items()}
        return doc


def discover(sigma: ProcessOperator | LabeledOperator) -> DiscoveryReport:
    """Induced graph, then the Markov check and channel extraction when it is acyclic."""
    if isinstance(sigma, LabeledOperator):
        sigma = ProcessOperator.from_operator(sigma)
    induced = simple_induced_graph(sigma)
    if not induced.is_dag():
        return DiscoveryReport(induced, False, None, None, None, ("induced graph has a directed cycle",))
    rep = check_markov(sigma, Dag(induced.nodes, induced.edges))
    return DiscoveryReport(induced, True, rep.verdict, rep.reconstruction_error, rep.channels, rep.failures)
