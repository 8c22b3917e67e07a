from pydantic_settings import BaseSettings, SettingsConfigDict


class AppConfig(BaseSettings):
    model_config = SettingsConfigDict(
        case_sensitive=True, env_prefix="STREAMSIM_", env_file=".env", extra="ignore"
    )

    SEED: int | None = None
    LOG_LEVEL: str = "INFO"
    OUT_DIR: str = "out"

    MAX_MESSAGES_PER_RUN: int = 128_000
    BROKER_MEMORY_BUDGET: int = 1024**3
    RUN_TIMEOUT: float = 600.0

    LOOPBACK_CONFIRM_WINDOW: int = 128
    PUBLISH_BACKOFF_INITIAL: float = 0.001
    PUBLISH_BACKOFF_CAP: float = 0.1

    OVERLAY_CREDENTIALS: list[str] | str = "streamsim"
    SESSION_STATE_FILE: str = ".streamsim/sessions.json"

    @property
    def overlay_credentials(self) -> list[str]:
        if isinstance(self.OVERLAY_CREDENTIALS, str):
            return [
                credential.strip()
                for credential in self.OVERLAY_CREDENTIALS.split(",")
                if credential.strip()
            ]
        return self.OVERLAY_CREDENTIALS


settings = AppConfig()
