from pydantic import BaseModel, ConfigDict
from typing import Optional, List, Dict


# ============= Grid Schemas =============

class CellKey(BaseModel):
    """One grid cell: unit tier, feature combination, context flag and classifier."""
    model_config = ConfigDict(frozen=True)

    tier: str
    combo: str
    context: bool
    classifier: str

    @property
    def label(self) -> str:
        return f"{self.tier}/{self.combo}/{'ctx' if self.context else 'noctx'}/{self.classifier}"


class SplitResult(BaseModel):
    """Scores of one grid cell on one (repeat, fold) split."""
    cell: CellKey
    repeat: int
    fold: int
    uar: float
    accuracy: float
    recall: List[Optional[float]]
    confusion: List[List[int]] = []
    n_test_units: int
    absent_classes: List[str] = []


# ============= Report Schemas =============

class CellSummary(BaseModel):
    """Aggregate of a cell: mean over folds within each repeat, then over repeats."""
    cell: CellKey
    uar: float
    accuracy: float
    uar_per_repeat: List[float]
    recall: Dict[str, Optional[float]]
    confusion: List[List[int]] = []
    n_splits: int
    chance: float


class CellFailure(BaseModel):
    cell: CellKey
    error: str
    message: str


class EvalReport(BaseModel):
    dialects: List[str]
    folds: int
    repeats: int
    seed: int
    splits: List[SplitResult] = []
    cells: List[CellSummary] = []
    failures: List[CellFailure] = []
    skipped_splits: List[str] = []

    @property
    def ok(self) -> bool:
        return not self.failures

    def best(self, classifier: Optional[str] = None) -> Optional[CellSummary]:
        """Highest aggregate UAR; earlier grid cells win ties."""
        candidates = [c for c in self.cells if classifier is None or c.cell.classifier == classifier]
        if not candidates:
            return None
        return max(candidates, key=lambda c: c.uar)

    def best_per_classifier(self) -> Dict[str, CellSummary]:
        out: Dict[str, CellSummary] = {}
        for c in self.cells:
            if c.cell.classifier not in out:
                out[c.cell.classifier] = self.best(c.cell.classifier)
        return out
