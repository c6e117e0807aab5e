"""Phase-2 candidate filtering: the relevance/support gate and the
utility-threshold ranking.

Candidates flow through three staged sets. The pool is the unranked
hybrid-retrieval union; the gated set keeps only passages judged both
relevant and supported (support counts for nothing when relevance fails);
the ranked set keeps gated passages whose utility clears an inclusive
threshold, ordered by utility descending. Both transformations are pure:
they take and return immutable candidate sets and never call a model.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING

from .errors import InvalidThreshold, MissingVerdict

if TYPE_CHECKING:
    from .index import ScoredCandidate
    from .judge import JudgeVerdict, QueryStatement

DEFAULT_UTILITY_THRESHOLD = 0.5


class Stage(str, Enum):
    POOL = "pool"      # hybrid-retrieval union, unranked
    GATED = "gated"    # relevant and supported
    RANKED = "ranked"  # utility >= threshold, utility-descending


@dataclass
class CandidateSet:
    """One stage of the candidate funnel.

    Entries pair each retrieval candidate with its judge verdict; pool
    entries have no verdict yet. ``utility_threshold`` is meaningful only
    at the ranked stage, where it records the cut that was applied.
    """

    stage: Stage
    entries: list[tuple["ScoredCandidate", "JudgeVerdict | None"]] = field(
        default_factory=list
    )
    query: "QueryStatement | None" = None
    utility_threshold: float = 0.0

    def __post_init__(self):
        if self.stage in (Stage.GATED, Stage.RANKED):
            for candidate, verdict in self.entries:
                if verdict is None:
                    raise ValueError(
                        f"{self.stage.value} entry {candidate.segment_id} lacks a verdict"
                    )
        if self.stage == Stage.RANKED:
            keys = [(-v.utility, c.segment_id) for c, v in self.entries]
            if keys != sorted(keys):
                raise ValueError("ranked entries must be utility-descending")
            for _, verdict in self.entries:
                if verdict.utility < self.utility_threshold:
                    raise ValueError(
                        f"ranked entry below threshold {self.utility_threshold}"
                    )

    def segment_ids(self) -> list[str]:
        return [candidate.segment_id for candidate, _ in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


def filter_relevant_supported(
    pool: CandidateSet, verdicts: dict[str, "JudgeVerdict"]
) -> CandidateSet:
    """Gate the pool: keep exactly the passages judged relevant AND supported.

    Every pool candidate must have a verdict; silently dropping an unjudged
    candidate would corrupt the audit trail, so a missing one is an error.
    Entry order is preserved. The dropped verdicts stay available to the
    caller through the verdict map.
    """
    if pool.stage != Stage.POOL:
        raise ValueError(f"expected a pool-stage set, got {pool.stage.value}")
    kept = []
    for candidate, _ in pool.entries:
        verdict = verdicts.get(candidate.segment_id)
        if verdict is None:
            raise MissingVerdict(f"no verdict for pool candidate {candidate.segment_id}")
        if verdict.relevant and verdict.supported:
            kept.append((candidate, verdict))
    return CandidateSet(stage=Stage.GATED, entries=kept, query=pool.query)


def rank_by_utility(gated: CandidateSet, utility_threshold: float) -> CandidateSet:
    """Keep gated passages with utility >= threshold (inclusive), ranked.

    Order is utility descending with ties broken by ascending segment_id,
    so the result is independent of the input entry order.
    """
    if not 0.0 <= utility_threshold <= 1.0:
        raise InvalidThreshold(f"utility threshold {utility_threshold!r} outside [0, 1]")
    if gated.stage != Stage.GATED:
        raise ValueError(f"expected a gated-stage set, got {gated.stage.value}")
    kept = [
        (candidate, verdict)
        for candidate, verdict in gated.entries
        if verdict.utility >= utility_threshold
    ]
    kept.sort(key=lambda entry: (-entry[1].utility, entry[0].segment_id))
    return CandidateSet(
        stage=Stage.RANKED,
        entries=kept,
        query=gated.query,
        utility_threshold=utility_threshold,
    )
