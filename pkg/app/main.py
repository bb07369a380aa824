import sys
from typing import List, Optional

import click
from dotenv import load_dotenv
from loguru import logger

from app.config.settings import settings as Settings
from app.events.shutdown import shutdown_event
from app.events.startup import startup_event
from app.routes.routes import include_routes
from app.utils.logger.setup import setup_logging


def create_app() -> click.Group:
    """
    Create and configure the command-line application.
    """

    @click.group(name=Settings.app_name, help=Settings.app_description)
    @click.version_option(Settings.app_version, prog_name=Settings.app_name)
    @click.pass_context
    def app(ctx: click.Context):
        startup_event()
        ctx.call_on_close(shutdown_event)

    # Setup Routers
    return include_routes(app)


def run_cli(argv: Optional[List[str]] = None) -> int:
    """Invoke the CLI and return its exit code (usage errors map to 1)."""
    try:
        rv = app.main(args=argv, prog_name=Settings.app_name, standalone_mode=False)
    except click.exceptions.UsageError as e:
        e.show()
        return 1
    except click.exceptions.ClickException as e:
        e.show()
        return e.exit_code
    except click.exceptions.Abort:
        click.echo("Aborted!", err=True)
        return 1
    return rv if isinstance(rv, int) else 0


# Loading environment variables
load_dotenv()
logger.debug("Initializing environment variables", extra={"debug": Settings.debug})

setup_logging(Settings)

app = create_app()


if __name__ == "__main__":
    sys.exit(run_cli())
