"""
Token accounting and cost of a trace.
"""
from decimal import Decimal, ROUND_HALF_UP
from typing import Any, Dict, Iterable, Tuple

from pydantic import BaseModel, Field

MILLION = Decimal(1_000_000)


class PriceTable(BaseModel):
    input_per_million: Decimal = Field(Decimal("2.50"), ge=0, description="Price of one million input tokens")
    output_per_million: Decimal = Field(Decimal("10.00"), ge=0, description="Price of one million output tokens")
    currency: str = "USD"


def token_totals(records: Iterable[Dict[str, Any]]) -> Tuple[int, int]:
    """Input and output tokens over the step records of a trace"""
    tokens_in = tokens_out = 0
    for record in records:
        if record.get("type") != "step":
            continue
        tokens_in += int(record.get("input_tokens") or 0)
        tokens_out += int(record.get("output_tokens") or 0)
    return tokens_in, tokens_out


def cost_of_tokens(tokens_in: int, tokens_out: int, prices: PriceTable) -> Decimal:
    return (Decimal(tokens_in) * prices.input_per_million + Decimal(tokens_out) * prices.output_per_million) / MILLION


def cost_of(records: Iterable[Dict[str, Any]], prices: PriceTable) -> Decimal:
    """Exact cost of a trace; round only for display"""
    return cost_of_tokens(*token_totals(records), prices)


def format_cost(amount: Decimal, prices: PriceTable, places: int = 3) -> str:
    quantum = Decimal(1).scaleb(-places)
    return f"{amount.quantize(quantum, rounding=ROUND_HALF_UP)} {prices.currency}"
