"""
Cost Ledger
Accumulates per-call usage records and prices them with exact decimal arithmetic.
"""

import logging
import threading
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Dict, Iterable, List, Optional

from .models import PriceTable, UsageRecord

logger = logging.getLogger(__name__)

_THOUSAND = Decimal(1000)


def price_tokens(prompt_tokens: int, completion_tokens: int, prices: PriceTable) -> Decimal:
    """Dollar cost of a token count"""
    return (Decimal(prompt_tokens) * prices.price_per_1k_prompt
            + Decimal(completion_tokens) * prices.price_per_1k_completion) / _THOUSAND


@dataclass(frozen=True)
class RoleTotals:
    """Totals for one group of records"""
    calls: int = 0
    prompt_tokens: int = 0
    completion_tokens: int = 0
    total_cost: Decimal = Decimal(0)

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens

    def to_dict(self) -> Dict:
        return {
            "calls": self.calls,
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "total_tokens": self.total_tokens,
            "total_cost": str(self.total_cost),
        }


@dataclass(frozen=True)
class LedgerTotals(RoleTotals):
    """Grand totals plus a per-role breakdown that sums to them"""
    per_role: Dict[str, RoleTotals] = field(default_factory=dict)

    def to_dict(self) -> Dict:
        data = super().to_dict()
        data["per_role"] = {role: totals.to_dict() for role, totals in self.per_role.items()}
        return data


def _group_totals(records: List[UsageRecord], prices: PriceTable) -> RoleTotals:
    prompt = sum(r.prompt_tokens for r in records)
    completion = sum(r.completion_tokens for r in records)
    return RoleTotals(
        calls=len(records),
        prompt_tokens=prompt,
        completion_tokens=completion,
        total_cost=price_tokens(prompt, completion, prices),
    )


class CostLedger:
    """Append-only record of LLM calls; appends are safe from concurrent callers"""

    def __init__(self, prices: Optional[PriceTable] = None,
                 records: Optional[Iterable[UsageRecord]] = None):
        self.prices = prices or PriceTable()
        self._records: List[UsageRecord] = list(records or [])
        self._lock = threading.Lock()

    @property
    def records(self) -> List[UsageRecord]:
        with self._lock:
            return list(self._records)

    def __len__(self) -> int:
        with self._lock:
            return len(self._records)

    def append(self, record: UsageRecord):
        with self._lock:
            self._records.append(record)
        logger.debug(f"Ledger: {record.role_tag.value} iter={record.iteration} "
                     f"tokens={record.prompt_tokens}+{record.completion_tokens} "
                     f"cost=${self.record_cost(record)} retries={record.retries} "
                     f"{record.wall_clock * 1000:.0f}ms")

    def extend(self, records: Iterable[UsageRecord]):
        for record in records:
            self.append(record)

    def record_cost(self, record: UsageRecord) -> Decimal:
        return price_tokens(record.prompt_tokens, record.completion_tokens, self.prices)

    def records_for(self, role_tag) -> List[UsageRecord]:
        return [r for r in self.records if r.role_tag == role_tag]

    def totals(self) -> "LedgerTotals":
        return ledger_totals(self)


def ledger_totals(ledger: CostLedger) -> LedgerTotals:
    """
    Exact totals for a ledger

    Cost is linear in the token counts, so the result does not depend on
    record order and the per-role costs add up to the grand total.
    """
    records = ledger.records
    by_role: Dict[str, List[UsageRecord]] = {}
    for record in records:
        by_role.setdefault(record.role_tag.value, []).append(record)

    grand = _group_totals(records, ledger.prices)
    return LedgerTotals(
        calls=grand.calls,
        prompt_tokens=grand.prompt_tokens,
        completion_tokens=grand.completion_tokens,
        total_cost=grand.total_cost,
        per_role={role: _group_totals(group, ledger.prices) for role, group in sorted(by_role.items())},
    )
