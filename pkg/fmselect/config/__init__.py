from fmselect.config.config_manager import ConfigManager, load_run_config
from fmselect.config.run_config import RunConfig

__all__ = ["ConfigManager", "RunConfig", "load_run_config"]
