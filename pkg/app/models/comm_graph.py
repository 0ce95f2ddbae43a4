"""Communication graph between inverters."""
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import networkx as nx
import numpy as np

from app.core.errors import ConfigurationError


@dataclass(frozen=True, eq=False)
class CommGraph:
    """Symmetric 0/1 adjacency over inverter ids, with a per-link enabled flag.

    Instances are immutable; link events return a new graph.
    """

    ids: tuple[str, ...]
    adjacency: np.ndarray
    enabled: np.ndarray

    def __post_init__(self) -> None:
        n = len(self.ids)
        for name in ("adjacency", "enabled"):
            m = getattr(self, name)
            if m.shape != (n, n):
                raise ConfigurationError(f"{name} must be {n}x{n}, got {m.shape}")
            if not np.array_equal(m, m.T):
                raise ConfigurationError(f"{name} must be symmetric")
        if np.any(np.diag(self.adjacency)):
            raise ConfigurationError("self-loops are not allowed")

    @classmethod
    def from_edges(cls, ids: Sequence[str], edges: Iterable[tuple[str, str]]) -> "CommGraph":
        ids = tuple(ids)
        pos = {k: i for i, k in enumerate(ids)}
        adj = np.zeros((len(ids), len(ids)), dtype=bool)
        for a, b in edges:
            if a not in pos or b not in pos:
                raise ConfigurationError(f"link {a}-{b} references an unknown inverter")
            if a == b:
                raise ConfigurationError(f"self-loop on {a}")
            adj[pos[a], pos[b]] = adj[pos[b], pos[a]] = True
        return cls(ids=ids, adjacency=adj, enabled=adj.copy())

    @classmethod
    def complete(cls, ids: Sequence[str]) -> "CommGraph":
        n = len(ids)
        adj = ~np.eye(n, dtype=bool)
        return cls(ids=tuple(ids), adjacency=adj, enabled=adj.copy())

    @classmethod
    def empty(cls, ids: Sequence[str]) -> "CommGraph":
        n = len(ids)
        adj = np.zeros((n, n), dtype=bool)
        return cls(ids=tuple(ids), adjacency=adj, enabled=adj.copy())

    @property
    def n(self) -> int:
        return len(self.ids)

    def index(self, inverter_id: str) -> int:
        try:
            return self.ids.index(inverter_id)
        except ValueError:
            raise ConfigurationError(f"unknown inverter in communication graph: {inverter_id}") from None

    def edges(self) -> list[tuple[str, str]]:
        rows, cols = np.nonzero(np.triu(self.adjacency))
        return [(self.ids[i], self.ids[j]) for i, j in zip(rows, cols)]

    @property
    def link_count(self) -> int:
        return int(np.count_nonzero(np.triu(self.adjacency)))

    def has_link(self, a: str, b: str) -> bool:
        return bool(self.adjacency[self.index(a), self.index(b)])

    def with_link_enabled(self, a: str, b: str, enabled: bool) -> "CommGraph":
        i, j = self.index(a), self.index(b)
        if not self.adjacency[i, j]:
            raise ConfigurationError(f"no communication link {a}-{b}")
        flags = self.enabled.copy()
        flags[i, j] = flags[j, i] = enabled
        return CommGraph(ids=self.ids, adjacency=self.adjacency, enabled=flags)

    def masked(self, mask: np.ndarray) -> "CommGraph":
        """Graph restricted to the links allowed by a symmetric boolean mask."""
        adj = self.adjacency & mask
        return CommGraph(ids=self.ids, adjacency=adj, enabled=self.enabled & adj)

    def effective(self, connected: Optional[np.ndarray] = None) -> np.ndarray:
        """c_ij AND link enabled AND both endpoints connected, as floats."""
        eff = self.adjacency & self.enabled
        if connected is not None:
            connected = np.asarray(connected, dtype=bool)
            eff = eff & connected[:, np.newaxis] & connected[np.newaxis, :]
        return eff.astype(float)

    def to_networkx(self, connected: Optional[np.ndarray] = None) -> nx.Graph:
        keep = np.ones(self.n, dtype=bool) if connected is None else np.asarray(connected, dtype=bool)
        graph = nx.Graph()
        graph.add_nodes_from(k for k, on in zip(self.ids, keep) if on)
        rows, cols = np.nonzero(np.triu(self.effective(keep)))
        graph.add_edges_from((self.ids[i], self.ids[j]) for i, j in zip(rows, cols))
        return graph
