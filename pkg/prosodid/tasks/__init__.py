# Celery tasks
from prosodid.tasks.sweep_tasks import run_grid_cell

__all__ = [
    "run_grid_cell",
]
