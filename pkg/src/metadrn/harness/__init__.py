from .config import ConfigError, RunConfig, load_config, parse_config
from .runner import cmd_compare, cmd_eval, cmd_train

__all__ = ["ConfigError", "RunConfig", "load_config", "parse_config", "cmd_compare", "cmd_eval", "cmd_train"]
