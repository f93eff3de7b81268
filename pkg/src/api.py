"""
FastAPI endpoints for defect triage over a trained checkpoint.
"""
import logging
import threading
from datetime import datetime
from typing import Any, Dict, List, Optional

import numpy as np
from fastapi import FastAPI, HTTPException, status
from fastapi.concurrency import run_in_threadpool
from pydantic import BaseModel, Field

from .checkpoint import Checkpoint
from .corpus import Defect, DatasetError, Dataset, Split
from .model import DEFAULT_THRESHOLD, sigmoid_array
from .tokenizer import encode_dataset

logger = logging.getLogger(__name__)


# Request/Response models
class HealthResponse(BaseModel):
    """Health check response"""
    status: str
    timestamp: str


class ModelResponse(BaseModel):
    """Loaded checkpoint description"""
    variant: str
    head: str
    precision: str
    vocab_hash: str
    vocab_size: int
    num_labels: int
    threshold: float
    metadata: Dict[str, Any]


class LabelsResponse(BaseModel):
    labels: List[str]


class DefectIn(BaseModel):
    """A defect to triage"""
    id: str = "defect"
    title: str = ""
    description: str = ""


class TriageRequest(BaseModel):
    defects: List[DefectIn] = Field(..., min_length=1)
    threshold: Optional[float] = Field(None, gt=0.0, lt=1.0)


class TriageResult(BaseModel):
    id: str
    labels: List[str]
    probabilities: Dict[str, float]


class TriageResponse(BaseModel):
    threshold: float
    results: List[TriageResult]


class TriageAPI:
    """
    FastAPI application serving one checkpoint.

    Endpoints:
    - GET /health - Liveness check
    - GET /api/model - Checkpoint metadata
    - GET /api/labels - Team label registry
    - POST /api/triage - Predict team labels for defects
    """

    def __init__(self, ckpt: Checkpoint, threshold: float = DEFAULT_THRESHOLD):
        self.ckpt = ckpt
        self.threshold = threshold
        self.model = ckpt.model()
        self.app = FastAPI(
            title="Defect Triage API",
            description="Multi-label team assignment for product defects",
            version="1.0.0"
        )
        self.requests_served = 0
        self.defects_triaged = 0
        self._stats_lock = threading.Lock()
        self._setup_routes()

    def triage(self, defects: List[DefectIn], threshold: float) -> List[TriageResult]:
        """Score defects synchronously; the route runs this in the threadpool"""
        records = []
        for d in defects:
            try:
                records.append(Defect(d.id, d.title, d.description))
            except DatasetError as e:
                raise HTTPException(status_code=status.HTTP_422_UNPROCESSABLE_ENTITY, detail=str(e))
        ids = [r.id for r in records]
        if len(set(ids)) != len(ids):
            raise HTTPException(status_code=status.HTTP_422_UNPROCESSABLE_ENTITY,
                                detail="defect ids must be unique within a request")
        ds = Dataset(self.ckpt.registry, tuple(records), Split.TEST)
        encoded = encode_dataset(ds, self.ckpt.vocab, self.ckpt.variant,
                                 self.ckpt.encoder.max_positions)
        probs = sigmoid_array(self.ckpt.logits(encoded, self.model))
        names = self.ckpt.registry.labels
        with self._stats_lock:
            self.requests_served += 1
            self.defects_triaged += len(records)
        return [
            TriageResult(
                id=record.id,
                labels=[names[t] for t in np.flatnonzero(row >= threshold)],
                probabilities={name: float(p) for name, p in zip(names, row)},
            )
            for record, row in zip(records, probs)
        ]

    def get_statistics(self) -> dict:
        return {
            "requests_served": self.requests_served,
            "defects_triaged": self.defects_triaged,
        }

    def _setup_routes(self) -> None:
        """Setup all API routes"""

        @self.app.get("/health", response_model=HealthResponse)
        async def health():
            """Liveness probe"""
            return HealthResponse(status="healthy", timestamp=datetime.now().isoformat())

        @self.app.get("/api/model", response_model=ModelResponse)
        async def model_info():
            return ModelResponse(
                variant=self.ckpt.variant.value,
                head=self.ckpt.head.kind.value,
                precision=self.ckpt.precision.value,
                vocab_hash=self.ckpt.vocab_hash,
                vocab_size=len(self.ckpt.vocab),
                num_labels=self.ckpt.head.num_labels,
                threshold=self.threshold,
                metadata=self.ckpt.metadata,
            )

        @self.app.get("/api/labels", response_model=LabelsResponse)
        async def labels():
            return LabelsResponse(labels=list(self.ckpt.registry.labels))

        @self.app.post("/api/triage", response_model=TriageResponse)
        async def triage(request: TriageRequest):
            """
            Predict team labels.

            A label is assigned when its probability reaches the threshold
            (request value, else the server default).
            """
            threshold = request.threshold if request.threshold is not None else self.threshold
            results = await run_in_threadpool(self.triage, request.defects, threshold)
            logger.info(f"Triaged {len(results)} defects at threshold {threshold}")
            return TriageResponse(threshold=threshold, results=results)


def create_api(ckpt: Checkpoint, threshold: float = DEFAULT_THRESHOLD) -> FastAPI:
    """
    Factory function to create FastAPI app.

    Args:
        ckpt: loaded checkpoint to serve
        threshold: default assignment threshold

    Returns:
        FastAPI application instance
    """
    api = TriageAPI(ckpt, threshold)
    return api.app
