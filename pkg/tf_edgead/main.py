import argparse
import inspect
import logging
import os
import sys

from .config import get_config, registry
from .errors import EdgeADError

__all__ = ["regist_subcommand", "main"]

LOG_LEVEL_ENV = "TF_EDGEAD_LOG_LEVEL"
SUB_COMMANDS = "sub_commands"

_register_command = registry(SUB_COMMANDS, "subcommand")


def regist_subcommand(name=None):
    """
    Register ``f`` as a subcommand, named after the function with ``_``
    written as ``-``. Positional parameters become positional arguments,
    keyword only parameters become ``--flag`` options; boolean defaults are
    switches and annotations are argument types.
    """

    def wrap(f):
        command = f.__name__.replace("_", "-") if name is None else name
        return _register_command(command, f)

    return wrap


def _add_arguments(parser, f):
    for param in inspect.signature(f).parameters.values():
        kwargs = {}
        has_default = param.default is not param.empty
        if param.annotation is not param.empty:
            kwargs["type"] = param.annotation
        if param.kind is param.KEYWORD_ONLY:
            flag = "--" + param.name.replace("_", "-")
            if isinstance(param.default, bool):
                action = "store_false" if param.default else "store_true"
                parser.add_argument(flag, dest=param.name, action=action)
                continue
            parser.add_argument(
                flag,
                dest=param.name,
                default=param.default if has_default else None,
                **kwargs
            )
        else:
            if has_default:
                kwargs.update(nargs="?", default=param.default)
            parser.add_argument(param.name, **kwargs)


def _call(f):
    params = inspect.signature(f).parameters.values()

    def run(namespace):
        args = [
            getattr(namespace, p.name)
            for p in params
            if p.kind is not p.KEYWORD_ONLY
        ]
        kwargs = {
            p.name: getattr(namespace, p.name)
            for p in params
            if p.kind is p.KEYWORD_ONLY
        }
        return f(*args, **kwargs)

    return run


def setup_logging():
    level = os.environ.get(LOG_LEVEL_ENV, "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def _print_error(code, message):
    message = " ".join(str(message).split())
    print("error {}: {}".format(code, message), file=sys.stderr, flush=True)


def build_parser():
    # pylint: disable=unused-import
    from . import app  # noqa: F401

    parser = argparse.ArgumentParser("tf_edgead")
    commands = parser.add_subparsers()
    for command, f in sorted(get_config(SUB_COMMANDS).items()):
        summary = (f.__doc__ or "").strip().split("\n")[0]
        sub = commands.add_parser(command, help=summary)
        _add_arguments(sub, f)
        sub.set_defaults(func=_call(f))
    return parser


def main(argv=None):
    """
    Command line entry point.

    :return: exit status, 0 on success, 1 on runtime errors and 2 on usage
        or stage dependency errors
    """
    setup_logging()
    parser = build_parser()
    namespace = parser.parse_args(argv)
    if not hasattr(namespace, "func"):
        parser.print_help()
        return 2
    try:
        namespace.func(namespace)
    except EdgeADError as e:
        _print_error(e.code, e)
        return e.exit_status
    except KeyboardInterrupt:
        _print_error("Interrupted", "stopped by the user")
        return 1
    except Exception as e:
        logging.getLogger(__name__).debug("unhandled error", exc_info=True)
        _print_error(type(e).__name__, e)
        return 1
    return 0
