from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Runtime configuration settings.

    Experiment hyperparameters do not live here; they come from the YAML run
    config (see ``app.models.RunConfig``).
    """

    model_config = SettingsConfigDict(
        env_file=".env",
        env_prefix="BRIGHTVAE_",
        case_sensitive=False,
    )

    # Application
    app_name: str = "BrightVAE"
    app_version: str = "1.0.0"
    debug: bool = False

    # Execution
    device: str = "cpu"
    load_workers: int = 4
    loader_workers: int = 0

    # Run artifacts
    manifest_filename: str = "manifest.json"
    metrics_filename: str = "metrics.prom"

    # Monitoring
    enable_metrics: bool = True
    log_level: str = "INFO"


settings = Settings()
