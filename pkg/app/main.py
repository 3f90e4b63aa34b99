"""
Command-line application
"""
import logging
from typing import Optional, Sequence

import click

from app.api import data, explain, incremental, training
from app.core.config import settings
from app.core.exceptions import ConfigError, ExplainILError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3


@click.group(name="explainil", context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(settings.app_version, prog_name=settings.app_name)
def cli():
    """Explanation-weighted incremental training for keyword-spotting classifiers"""


# Register command modules
cli.add_command(data.prepare_data)
cli.add_command(data.gen_synthetic)
cli.add_command(training.train_initial)
cli.add_command(training.evaluate_command)
cli.add_command(explain.explain_command)
cli.add_command(incremental.run_incremental_command)
cli.add_command(incremental.sweep_lambda_command)
cli.add_command(incremental.compare_modes_command)
cli.add_command(incremental.compare_metrics_command)


def _error_line(error: BaseException) -> None:
    click.echo(f"error: {type(error).__name__}: {error}", err=True)


def dispatch(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run one subcommand and map the outcome to an exit code

    Returns:
        0 on success (including --help), 2 for usage errors, 3 for config
        errors, 1 for any other failure
    """
    try:
        result = cli.main(args=list(argv) if argv is not None else None, prog_name="explainil",
                          standalone_mode=False)
    except click.UsageError as e:
        e.show()
        _error_line(e)
        return EXIT_USAGE
    except click.ClickException as e:
        e.show()
        return e.exit_code
    except click.Abort:
        _error_line(RuntimeError("aborted"))
        return EXIT_FAILURE
    except ConfigError as e:
        logger.error(f"Config error: {e}")
        _error_line(e)
        return EXIT_CONFIG
    except (ExplainILError, OSError, ValueError) as e:
        logger.error(f"Command failed: {e}")
        _error_line(e)
        return EXIT_FAILURE
    except Exception as e:
        logger.exception(f"Unexpected failure: {e}")
        _error_line(e)
        return EXIT_FAILURE

    return result if isinstance(result, int) else EXIT_OK
