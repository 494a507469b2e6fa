"""
Process-wide settings and registries.

Settings are kept by name in one dictionary. Registries (ingestion
layouts, training strategies) are dictionaries stored as settings, so
plugins add entries with the decorators built by :func:`registry`.
"""
import warnings

_MISSING = object()


def create_config(default=None):
    """
    New settings store.

    :return: ``(set_config, get_config, regist_config)``; setting or getting
        an unregistered name raises KeyError unless a default is given
    """
    settings = dict(default or {})

    def set_(name, var):
        if name not in settings:
            raise KeyError("no setting named {}".format(name))
        settings[name] = var

    def get_(name, default=_MISSING):
        if name in settings:
            return settings[name]
        if default is _MISSING:
            raise KeyError("no setting named {}".format(name))
        return default

    def regist_(name, var):
        if name in settings:
            raise KeyError("setting {} already exists".format(name))
        settings[name] = var
        return var

    return set_, get_, regist_


set_config, get_config, regist_config = create_config({"dtype": "float64"})


def registry(config_name, kind):
    """
    Create the registry ``config_name`` and return its decorator
    ``register(name=None, f=None)``. Entries default to the function name;
    registering a name twice warns and keeps the later entry.
    """
    entries = regist_config(config_name, {})

    def register(name=None, f=None):
        def regist(g):
            my_name = g.__name__ if name is None else name
            if my_name in entries:
                warnings.warn("Override {} {}".format(kind, my_name))
            entries[my_name] = g
            return g

        if f is None:
            return regist
        return regist(f)

    return register
