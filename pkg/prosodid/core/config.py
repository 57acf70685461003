from pydantic_settings import BaseSettings
from typing import Optional


class Settings(BaseSettings):
    # Logging
    LOG_LEVEL: str = "INFO"

    # Feature cache (tracks, syllable tiers, descriptor matrices)
    PROSODID_CACHE: str = ".prosodid_cache"

    # Redis (for distributed grid execution)
    REDIS_URL: str = "redis://localhost:6379/0"
    CELERY_TASK_ALWAYS_EAGER: bool = False

    # Worker pool; None means one per processor, capped by the job count
    DEFAULT_WORKERS: Optional[int] = None

    class Config:
        env_file = ".env"
        case_sensitive = True
        extra = "ignore"


settings = Settings()
