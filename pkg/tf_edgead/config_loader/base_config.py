import copy
import os

import yaml


def load_config(source):
    """Parsed YAML of ``source`` (a file name), or a copy of a dict."""
    if isinstance(source, dict):
        return copy.deepcopy(source)
    if isinstance(source, str):
        with open(source) as f:
            ret = yaml.safe_load(f)
        return {} if ret is None else ret
    raise TypeError("not support config {}".format(type(source)))


class BaseConfig(object):
    """
    Dictionary backed configuration. ``config_dir`` is the directory of the
    file, or the working directory for a dict, and anchors relative paths.
    """

    def __init__(self, source):
        self.config = load_config(source)
        if isinstance(source, str):
            self.config_dir = os.path.dirname(os.path.abspath(source))
        else:
            self.config_dir = os.getcwd()

    def __getitem__(self, key):
        return self.config.get(key)

    def __setitem__(self, key, value):
        self.config[key] = value
