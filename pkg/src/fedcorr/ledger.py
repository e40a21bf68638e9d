"""Exact per-round, per-direction counts of transmitted scalar elements.

Counting rules:

* uplink is counted per client, one element per transmitted real;
* top-k residual indices are tallied separately as ``index_overhead`` and are
  not part of ``uplink``;
* anything the server broadcasts (global model, shared bases) is counted once;
* payloads addressed to one client (per-client bases) are counted per client.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from fedcorr.errors import ShapeMismatch


@dataclass
class CommDelta:
    uplink: list
    index_overhead: int = 0
    downlink_broadcast: int = 0
    downlink_basis: int = 0
    downlink_per_client: list = field(default_factory=list)

    def __post_init__(self):
        if not self.downlink_per_client:
            self.downlink_per_client = [0] * len(self.uplink)

    @classmethod
    def empty(cls, clients: int) -> "CommDelta":
        return cls(uplink=[0] * clients)

    @property
    def uplink_total(self) -> int:
        return sum(self.uplink)

    @property
    def downlink_total(self) -> int:
        return self.downlink_broadcast + self.downlink_basis + sum(self.downlink_per_client)

    @property
    def total(self) -> int:
        return self.uplink_total + self.downlink_total

    def __iadd__(self, other: "CommDelta") -> "CommDelta":
        if len(other.uplink) != len(self.uplink):
            raise ShapeMismatch("client counts differ")
        self.uplink = [a + b for a, b in zip(self.uplink, other.uplink)]
        self.downlink_per_client = [
            a + b for a, b in zip(self.downlink_per_client, other.downlink_per_client)
        ]
        self.index_overhead += other.index_overhead
        self.downlink_broadcast += other.downlink_broadcast
        self.downlink_basis += other.downlink_basis
        return self

    def as_dict(self) -> dict:
        return {
            "uplink": list(self.uplink),
            "uplink_total": self.uplink_total,
            "index_overhead": self.index_overhead,
            "downlink_broadcast": self.downlink_broadcast,
            "downlink_basis": self.downlink_basis,
            "downlink_per_client": list(self.downlink_per_client),
            "downlink_total": self.downlink_total,
        }


class CommLedger:
    """Running record of :class:`CommDelta` entries, one per round."""

    def __init__(self):
        self.rounds: list[tuple[int, CommDelta]] = []

    def record(self, t: int, delta: CommDelta) -> None:
        self.rounds.append((t, delta))

    def _sum(self, attr: str, upto: int | None = None) -> int:
        return sum(getattr(d, attr) for t, d in self.rounds if upto is None or t <= upto)

    def uplink(self, upto: int | None = None) -> int:
        return self._sum("uplink_total", upto)

    def downlink(self, upto: int | None = None) -> int:
        return self._sum("downlink_total", upto)

    def basis_downlink(self, upto: int | None = None) -> int:
        return sum(
            d.downlink_basis + sum(d.downlink_per_client)
            for t, d in self.rounds
            if upto is None or t <= upto
        )

    def index_overhead(self, upto: int | None = None) -> int:
        return self._sum("index_overhead", upto)

    def total(self, upto: int | None = None) -> int:
        return self.uplink(upto) + self.downlink(upto)
