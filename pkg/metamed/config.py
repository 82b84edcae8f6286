"""Runtime configuration from environment variables (prefix METAMED_)."""
from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    threads: int = 4  # METAMED_THREADS caps bootstrap/simulation workers
    log_level: str = "INFO"
    seed: int = 20240101

    # Bootstrap
    bootstrap_b: int = 1000
    bootstrap_min_success: float = 0.95

    # Application screening rules
    min_n: int = 10
    skew_cap: float = 0.75
    min_studies: int = 6

    # Estimator numerics
    qe_restarts: int = 3
    lambda_bound: float = 3.0
    lambda_grid: int = 61
    boxcox_tail: float = 1e-4  # probability trimmed from each end of a Box-Cox normal

    @property
    def workers(self) -> int:
        return max(1, self.threads)

    model_config = {
        "env_prefix": "METAMED_",
        "env_file": ".env",
        "env_file_encoding": "utf-8",
        "extra": "ignore",
    }


settings = Settings()
