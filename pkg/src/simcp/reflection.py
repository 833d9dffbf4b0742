import logging
from importlib import import_module

from simcp.data import ConfigError


def get_class_for_name(class_name: str):
    """
    Resolves a dotted ``package.module.Class`` path to the class object.
    """
    try:
        module_path, name = class_name.rsplit('.', 1)
        return getattr(import_module(module_path), name)
    except (ValueError, ImportError, AttributeError) as e:
        logging.getLogger(__name__).debug("Unable to resolve %s: %s",
                                          class_name, e)
        raise ConfigError(f"cannot resolve class '{class_name}'")
