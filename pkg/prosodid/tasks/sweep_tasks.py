import logging

from prosodid.celery_app import celery_app
from prosodid.schemas.corpus import CorpusManifest, FoldPlan
from prosodid.schemas.experiment import ExperimentConfig
from prosodid.schemas.report import CellKey

logger = logging.getLogger(__name__)


def decode_payload(payload: dict):
    """Manifest, fold plan and config from the JSON payload shared by every grid task."""
    return (
        CorpusManifest.model_validate(payload["manifest"]),
        FoldPlan.model_validate(payload["plan"]),
        ExperimentConfig.model_validate(payload["config"]),
    )


@celery_app.task(bind=True, max_retries=3, default_retry_delay=60)
def run_grid_cell(self, payload: dict, cell: dict) -> dict:
    """
    Evaluate one grid cell over every split of the plan.
    Cell-level errors come back in "failure"; only infrastructure errors retry.
    """
    from prosodid.services.eval_service import run_cell

    key = CellKey.model_validate(cell)
    logger.info(f"Running grid cell {key.label}")
    manifest, plan, config = decode_payload(payload)
    try:
        results, skipped, failure = run_cell(manifest, plan, config, key, reraise_io=True)
    except OSError as exc:
        logger.warning(f"Grid cell {key.label} hit an I/O error, retrying: {exc}")
        raise self.retry(exc=exc)
    return {
        "results": [r.model_dump(mode="json") for r in results],
        "skipped": skipped,
        "failure": failure.model_dump(mode="json") if failure else None,
    }
