from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict
from functools import lru_cache

class Settings(BaseSettings):
    # Surface projection / sampling
    PROJECTION_TOL: float = Field(1e-12, gt=0)
    PROJECTION_MAX_ITER: int = Field(50, ge=1)
    SAMPLING_RETRY_BUDGET: int = Field(200, ge=1)
    CANDIDATES_PER_POINT: int = Field(25, ge=1)
    PROBE_FACTOR: int = Field(100, ge=1)

    # Linear algebra
    RANK_TOL: float = Field(1e-12, gt=0)
    SOLVER_DRIVER: str = Field("gelsy", pattern="^(gelsy|gelsd)$")
    PHI_JITTER: tuple[float, ...] = (0.0, 1e-14, 1e-12, 1e-10)
    BLOCK_ROWS: int = Field(256, ge=1)
    REAL_FORM: bool = True

    # Quadrature / harness
    CIRCLE_NODES: int = Field(1000, ge=3)
    THREADS: int = Field(1, ge=1)
    RESULTS_DIR: str = "results"
    DUMP_DIR: str = ""

    # `weights` command basis
    WEIGHTS_MODES: int = Field(16, ge=1)
    WEIGHTS_Q: float = Field(10.0 / 3.0, gt=0)
    WEIGHTS_T: float = Field(12.0, gt=0)

    LOG_LEVEL: str = "INFO"

    # pydantic-settings v2 config
    model_config = SettingsConfigDict(
        env_file=".env",
        env_prefix="MESHFREE_",
        case_sensitive=False,
    )

@lru_cache()
def get_settings() -> Settings:
    return Settings()
