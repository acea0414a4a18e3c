import json
import os
from pathlib import Path
from typing import Optional

DEFAULT_CONFIG_PATH = Path(__file__).resolve().parent / "config.json"

# Remote planner credentials may come from the environment instead of the file
ENV_OVERRIDES = {
    "AUDIT_API_KEY": "api_key",
    "AUDIT_BASE_URL": "base_url",
    "AUDIT_MODEL": "model",
}


def load_config(config_path) -> dict:
    """Load configuration from config.json"""
    if config_path is None:
        raise ValueError(f"Invalid config_path={config_path}")
    with open(config_path, "r", encoding="utf-8") as f:
        config = json.load(f)
    planner = config.setdefault("planner", {})
    for env_name, key in ENV_OVERRIDES.items():
        value = os.environ.get(env_name)
        if value:
            planner[key] = value
    return config


# Lazy-loaded config singleton
_config: Optional[dict] = None


def get_config(config_path=None) -> dict:
    """Get cached config"""
    global _config
    if _config is None:
        _config = load_config(config_path or os.environ.get("AUDIT_CONFIG", DEFAULT_CONFIG_PATH))
    return _config


def reset_config():
    """Drop the cached config (tests switch between config files)"""
    global _config
    _config = None


def get_planner_config() -> dict:
    """Get planner backend configuration"""
    return get_config().get("planner", {})


def get_run_config() -> dict:
    """Get agent run defaults"""
    return get_config().get("run", {})


def get_service_config() -> dict:
    """Get target service defaults"""
    return get_config().get("service", {})


def get_training_config() -> dict:
    """Get target training recipe defaults"""
    return get_config().get("training", {})


def get_price_table_config() -> dict:
    """Get token price table"""
    return get_config().get("price_table", {})


# Convenience accessors
PLANNER_BACKEND = lambda: get_planner_config().get("backend", "mock")
PLANNER_MODEL = lambda: get_planner_config().get("model", "gpt-4o")
WORKSPACE_ROOT = lambda: get_config().get("workspace_root", "workspace")
