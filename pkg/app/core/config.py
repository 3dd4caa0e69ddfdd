"""
Core configuration and settings.
"""

from typing import Optional

from pydantic import Field
from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    """Application settings."""

    # Application
    APP_NAME: str = Field(default="styleforge")
    APP_VERSION: str = Field(default="0.1.0")
    DEBUG: bool = Field(default=False)
    LOG_LEVEL: str = Field(default="INFO")

    # Backend selection
    STYLEFORGE_BACKEND: str = Field(default="reference", pattern="^(reference|hf)$")
    DEVICE: str = Field(default="cpu", pattern="^(cpu|cuda|auto)$")
    NUM_THREADS: int = Field(default=0, ge=0)  # 0 = torch default
    SHOW_PROGRESS: bool = Field(default=False)

    # Pretrained checkpoints for the hf backend
    HF_GENERATOR_MODEL: str = Field(default="EleutherAI/gpt-neo-1.3B")
    HF_CLASSIFIER_MODEL: str = Field(default="microsoft/deberta-v3-large")

    # Corpus
    ABBREVIATIONS_FILE: Optional[str] = Field(default=None)

    class Config:
        env_file = ".env"
        case_sensitive = True


settings = Settings()
