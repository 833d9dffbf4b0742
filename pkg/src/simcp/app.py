"""
A small command framework on top of argparse.

An :class:`App` subclass exposes each method decorated with :class:`Command`
as a sub-command. Command line options are derived from the method signature
(name, type hint, default) and can be refined with :class:`Arg` entries.

.. sourcecode:: pycon

    >>> class ToolApp(App):
    >>>
    >>>     @Command(help="Summarizes a matrix",
    >>>              args=[Arg(dest="matrix", help="CSV or CPM1 file")])
    >>>     def summarize(self, matrix: str, alpha: float = 0.1):
    >>>         ...
    >>>
    >>> ToolApp().run(["summarize", "--matrix", "m.csv", "--alpha", "0.05"])

Every command also accepts ``--log-level``, ``--log-file`` and ``--config``
plus the app's own global arguments. :meth:`App.run` returns the exit code:
0 on success, 1 when the command raised a :class:`~simcp.data.SimcpError`,
2 for usage errors.
"""
import argparse
import inspect
import itertools
import logging
from dataclasses import dataclass, field, fields
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, \
    Type, Union

from dotenv import find_dotenv, load_dotenv

from simcp.conf import load_config_file
from simcp.data import SimcpError

COMMAND_NAME = "app_command_name"
COMMAND_ARGS = "app_command_args"
COMMAND_HELP = "app_command_help"

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2

LOG_FORMAT = '%(asctime)s %(levelname)s [%(name)s] %(message)s'
LOG_LEVELS = ['CRITICAL', 'ERROR', 'WARNING', 'INFO', 'DEBUG']
TRUE_STRINGS = ("1", "true", "yes", "on")


class NoCommandException(Exception):
    """
    Raised when an App subclass defines no commands.
    """

    def __init__(self):
        super(NoCommandException, self).__init__("No Commands Defined")


def option_name(dest: str) -> str:
    """
    Command line flag for a parameter name: ``cal_fraction`` becomes
    ``--cal-fraction`` and ``lambda_`` becomes ``--lambda``.
    """
    return "--" + dest.rstrip("_").replace("_", "-")


def _unset(name: str, value: Any) -> bool:
    if name == "type":
        return value is None or value is str
    if name == "action":
        return value == "store"
    if name == "required":
        return not value
    return value is None or value == "" or (isinstance(value, list)
                                            and len(value) == 0)


@dataclass
class Arg:
    """
    Keyword arguments for ``ArgumentParser.add_argument`` bound to one
    parameter (``dest``) of a command method. Unset ``option_names`` are
    derived from ``dest`` with :func:`option_name`.
    """
    dest: str
    option_names: List[str] = field(default_factory=list)
    nargs: str = "?"
    help: str = ""
    type: Union[Type, Callable[[str], Any]] = None
    default: Any = None
    required: bool = False
    choices: Optional[List[Any]] = None
    action: str = "store"

    def update(self,
               other: Optional['Arg']) -> None:
        """
        Fills every field this Arg leaves unset (empty names, help or
        choices, a ``None`` default, a missing or ``str`` type, the ``store``
        action, ``required=False``) from ``other``.
        """
        if other is None:
            return
        for f in fields(self):
            if f.name in ("dest", "nargs"):
                continue
            if _unset(f.name, getattr(self, f.name)):
                setattr(self, f.name, getattr(other, f.name))

    def add_to(self,
               parser: argparse.ArgumentParser) -> None:
        kwargs = {f.name: getattr(self, f.name) for f in fields(self)}
        flags = kwargs.pop("option_names") or [option_name(self.dest)]
        if self.action != "store":
            for key in ("nargs", "type", "choices"):
                del kwargs[key]
        parser.add_argument(*flags, **kwargs)


def _signature_arg(parameter: inspect.Parameter) -> Arg:
    annotation = parameter.annotation
    if annotation is inspect.Parameter.empty:
        annotation = str
    if parameter.default is inspect.Parameter.empty:
        return Arg(parameter.name, option_names=[option_name(parameter.name)],
                   type=annotation, required=True)
    action = "store"
    if annotation is bool:
        action = "store_true" if parameter.default is False \
            else "store_false"
    return Arg(parameter.name, option_names=[option_name(parameter.name)],
               type=annotation, default=parameter.default, action=action)


def command_args(func: Callable,
                 overrides: Iterable[Arg]) -> Dict[str, Arg]:
    """
    One Arg per parameter of ``func`` (``self`` excluded); each explicit
    override takes precedence and inherits whatever it leaves unset from the
    signature.
    """
    parameters = list(inspect.signature(func).parameters.values())[1:]
    args = {p.name: _signature_arg(p) for p in parameters}
    for override in overrides:
        override.update(args.get(override.dest))
        args[override.dest] = override
    return args


@dataclass
class Command:
    """
    Marks an App method as a command. The name defaults to the method name
    with dashes for underscores.
    """
    name: Optional[str] = None
    help: str = ""
    args: Iterable[Arg] = field(default_factory=list)

    def __call__(self,
                 func):
        setattr(func, COMMAND_NAME,
                self.name or func.__name__.replace("_", "-"))
        setattr(func, COMMAND_ARGS, command_args(func, self.args))
        setattr(func, COMMAND_HELP, self.help)
        return func


def _as_flag(value: Any) -> bool:
    if isinstance(value, str):
        return value.strip().lower() in TRUE_STRINGS
    return bool(value)


def configure_logging(level: str,
                      log_file: Optional[str] = None) -> None:
    """
    Resets the root logger to a console handler (and an optional file
    handler) using ``LOG_FORMAT``.
    """
    formatter = logging.Formatter(LOG_FORMAT)
    handlers: List[logging.Handler] = [logging.StreamHandler()]
    if log_file is not None:
        handlers.append(logging.FileHandler(log_file, "w+"))
    root = logging.getLogger()
    root.setLevel(logging.getLevelName(level))
    root.handlers = []
    for handler in handlers:
        handler.setFormatter(formatter)
        root.addHandler(handler)


class App:
    """
    Base class of a multi-command application. Subclasses set
    ``__description__`` and ``__version__``, register extra options with
    :meth:`add_global_argument` and may override :meth:`setup` and
    :meth:`complete`. Values of the global arguments land in
    ``parsed_global_args`` before :meth:`setup` runs.
    """
    __description__: str = ""
    __version__: str = "0.1"

    def __init__(self):
        load_dotenv(find_dotenv(usecwd=True))
        self.logger: Optional[logging.Logger] = None
        self.parsed_global_args: Dict[str, Any] = dict()
        self._global_arguments: List[Arg] = [
            Arg(dest='log_file', option_names=['--log-file'],
                action='store_true', type=bool, default=False,
                help=f'Also log to ./{type(self).__name__}.log'),
            Arg(dest='log_level', option_names=['--log-level'],
                choices=LOG_LEVELS, default='INFO',
                help='Lowest level of log messages to show'),
            Arg(dest='config', option_names=['--config'], type=str,
                help='key=value or YAML file with argument defaults; '
                     'command line flags take precedence'),
        ]
        self._commands: Dict[str, Callable] = {
            getattr(method, COMMAND_NAME): method
            for _, method in inspect.getmembers(self,
                                                predicate=inspect.ismethod)
            if hasattr(method, COMMAND_NAME)}

    def add_global_argument(self,
                            args: Union[Arg, List[Arg]]) -> None:
        self._global_arguments.extend(args if isinstance(args, list)
                                      else [args])

    def setup(self) -> None:
        """
        Runs after argument parsing and before the command.
        """

    def complete(self,
                 command: str,
                 arguments: Dict[str, Any]) -> None:
        """
        Runs after a command finished successfully, with its resolved
        arguments.
        """

    def run(self,
            argv: Optional[Sequence[str]] = None) -> int:
        if not self._commands:
            raise NoCommandException()
        argv = None if argv is None else list(argv)
        try:
            if len(self._commands) == 1:
                command, rest = next(iter(self._commands.values())), argv
            else:
                parser = argparse.ArgumentParser(
                    description=self.__description__)
                parser.add_argument("option", choices=sorted(self._commands),
                                    help="Which command to run")
                self._add_version(parser)
                known, rest = parser.parse_known_args(argv)
                command = self._commands[known.option]
            return self._dispatch(command, rest)
        except SystemExit as e:
            if e.code is None:
                return EXIT_OK
            return e.code if isinstance(e.code, int) else EXIT_USAGE

    def _add_version(self,
                     parser: argparse.ArgumentParser) -> None:
        parser.add_argument("-v", "--version", action="version",
                            version=f"{type(self).__name__} "
                                    f"{self.__version__}")

    def _parse(self,
               cmd_func: Callable,
               arguments: Optional[List[str]]) -> Dict[str, Any]:
        name = getattr(cmd_func, COMMAND_NAME)
        parser = argparse.ArgumentParser(
            prog=f"{type(self).__name__} {name}",
            description=f"{self.__description__}\n{'-' * 20}\n"
                        f"{getattr(cmd_func, COMMAND_HELP)}")
        for arg in itertools.chain(getattr(cmd_func, COMMAND_ARGS).values(),
                                   self._global_arguments):
            arg.add_to(parser)
        self._add_version(parser)

        pre_parser = argparse.ArgumentParser(add_help=False)
        pre_parser.add_argument("--config", default=None)
        config_path = pre_parser.parse_known_args(arguments)[0].config
        if config_path is not None:
            try:
                self._apply_config(parser, cmd_func,
                                   load_config_file(config_path))
            except SimcpError as e:
                parser.error(str(e))
        return vars(parser.parse_args(arguments))

    def _dispatch(self,
                  cmd_func: Callable,
                  arguments: Optional[List[str]] = None) -> int:
        args = self._parse(cmd_func, arguments)
        configure_logging(args['log_level'],
                          f"./{type(self).__name__}.log"
                          if args['log_file'] else None)
        for arg in self._global_arguments:
            self.parsed_global_args[arg.dest] = args.pop(arg.dest)

        self.logger = logging.getLogger(type(self).__name__)
        try:
            self.setup()
            cmd_func(**args)
            self.complete(getattr(cmd_func, COMMAND_NAME), args)
        except SimcpError as e:
            self.logger.error("%s", e)
            return EXIT_ERROR
        return EXIT_OK

    def _apply_config(self,
                      parser: argparse.ArgumentParser,
                      cmd_func: Callable,
                      values: Dict[str, Any]) -> None:
        known = {arg.dest: arg for arg in itertools.chain(
            getattr(cmd_func, COMMAND_ARGS).values(), self._global_arguments)}
        defaults = dict()
        for key, value in values.items():
            arg = known.get(key, known.get(f"{key}_"))
            if arg is None or arg.dest == 'config':
                continue
            if arg.action in ("store_true", "store_false"):
                value = _as_flag(value)
            defaults[arg.dest] = value
        # a config value satisfies a required argument
        for action in parser._actions:
            if action.dest in defaults:
                action.required = False
        parser.set_defaults(**defaults)
