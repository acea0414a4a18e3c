"""
Attacker-side black-box client for a target service.
"""
import logging
from typing import List, Optional

import numpy as np
import requests

from core.errors import BudgetExhaustedError, PreconditionError, ServiceRequestError, ServiceUnavailableError

logger = logging.getLogger(__name__)


class ServiceClient:
    """Chunks batches, tracks the rows it spent, and maps wire errors to exceptions"""

    def __init__(
        self,
        predict_url: str,
        embedding_url: Optional[str] = None,
        timeout: float = 30.0,
        max_batch_rows: int = 256,
    ):
        self.predict_url = predict_url
        self.embedding_url = embedding_url
        self.timeout = timeout
        self.max_batch_rows = max_batch_rows
        self.queries_used = 0
        self.remaining_budget: Optional[int] = None

    @property
    def health_url(self) -> str:
        return self.predict_url.rsplit("/", 1)[0] + "/health"

    def ping(self) -> bool:
        try:
            resp = requests.get(self.health_url, timeout=self.timeout)
            return resp.status_code == 200
        except requests.RequestException:
            return False

    def _post(self, url: str, rows: np.ndarray, key: str) -> np.ndarray:
        try:
            resp = requests.post(url, json={"inputs": rows.tolist()}, timeout=self.timeout)
        except requests.RequestException as e:
            raise ServiceUnavailableError(f"cannot reach {url}: {e}") from e
        try:
            body = resp.json()
        except ValueError:
            body = {}
        if resp.status_code == 429:
            remaining = int(body.get("remaining_budget") or 0)
            self.remaining_budget = remaining
            raise BudgetExhaustedError(body.get("message", "query budget exhausted"), remaining)
        if resp.status_code != 200:
            raise ServiceRequestError(resp.status_code, body.get("error", "unknown"), body.get("message", resp.text))
        if body.get("remaining_budget") is not None:
            self.remaining_budget = int(body["remaining_budget"])
        self.queries_used += len(rows)
        return np.asarray(body[key], dtype=np.float64)

    def _query(self, url: Optional[str], inputs, key: str) -> np.ndarray:
        if url is None:
            raise PreconditionError(f"service exposes no endpoint returning {key}")
        rows = np.asarray(inputs, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[0] == 0:
            raise PreconditionError(f"queries need a non-empty 2-D batch, got shape {rows.shape}")
        done: List[np.ndarray] = []
        for start in range(0, rows.shape[0], self.max_batch_rows):
            try:
                done.append(self._post(url, rows[start:start + self.max_batch_rows], key))
            except BudgetExhaustedError as e:
                e.partial = np.vstack(done) if done else None
                logger.warning("budget exhausted after %d rows", sum(len(d) for d in done))
                raise
        return np.vstack(done)

    def predict(self, inputs) -> np.ndarray:
        return self._query(self.predict_url, inputs, "posteriors")

    def embed(self, inputs) -> np.ndarray:
        return self._query(self.embedding_url, inputs, "embeddings")
