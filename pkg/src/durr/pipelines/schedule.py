from __future__ import annotations

from dataclasses import dataclass

# loop times per degradation level used for the full-size models
REFINED_DENOISE = ((25, 4), (35, 6), (45, 9), (55, 12))
REFINED_DEBLOCK = ((20, 6), (30, 4))
NAIVE_LOOPS = 8


@dataclass(frozen=True)
class Schedule:
    """Unrolling count per degradation level."""

    pairs: tuple[tuple[float, int], ...]
    kind: str = "refined"

    def __post_init__(self):
        if self.kind not in ("naive", "refined"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if not self.pairs:
            raise ValueError("empty schedule")
        levels = [lv for lv, _ in self.pairs]
        if len(set(levels)) != len(levels):
            raise ValueError(f"duplicate levels in schedule: {levels}")
        for lv, n in self.pairs:
            if int(n) != n or n < 1:
                raise ValueError(f"loop time for level {lv} must be an integer >= 1, got {n}")
        if self.kind == "naive" and len({n for _, n in self.pairs}) != 1:
            raise ValueError("a naive schedule uses one loop time for every level")

    @classmethod
    def refined(cls, pairs) -> "Schedule":
        return cls(tuple((float(lv), int(n)) for lv, n in pairs), "refined")

    @classmethod
    def naive(cls, loops: int, levels) -> "Schedule":
        return cls(tuple((float(lv), int(loops)) for lv in levels), "naive")

    @classmethod
    def parse(cls, text: str, kind: str = "refined") -> "Schedule":
        """``"25:4,35:6"`` -> refined schedule."""
        pairs = []
        for item in text.split(","):
            lv, _, n = item.strip().partition(":")
            if not n:
                raise ValueError(f"schedule entry {item!r} is not level:loops")
            pairs.append((float(lv), int(n)))
        return cls(tuple(pairs), kind)

    @property
    def levels(self) -> list[float]:
        return [lv for lv, _ in self.pairs]

    def loops(self, level: float) -> int:
        for lv, n in self.pairs:
            if lv == level:
                return n
        raise KeyError(f"level {level} not in schedule")

    def as_text(self) -> str:
        return ",".join(f"{lv:g}:{n}" for lv, n in self.pairs)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "pairs": [[lv, n] for lv, n in self.pairs]}
