from app.core.logging import setup_logging
setup_logging()

import sys

import click

from app.harness import runner


@click.group(help="Simulation and verification toolkit for small-variance diffusions and their Euler schemes.")
def cli() -> None:
    pass


@cli.command("run", help="Run the suites of CONFIG and write rates.csv, suites.csv and report.txt.")
@click.argument("config", type=click.Path(dir_okay=False))
@click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE", help="Override a config value (repeatable).")
@click.option("--output-dir", type=click.Path(file_okay=False), default=None, help="Where result files go.")
@click.option("--threads", type=click.IntRange(min=1), default=None, help="Replicate workers (default SNDE_THREADS).")
def run_command(config: str, overrides: tuple[str, ...], output_dir: str | None, threads: int | None) -> None:
    sys.exit(runner.run(config, overrides, output_dir=output_dir, threads=threads))


@cli.command("validate", help="Check the declared constants of the model in CONFIG.")
@click.argument("config", type=click.Path(dir_okay=False))
@click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE", help="Override a config value (repeatable).")
def validate_command(config: str, overrides: tuple[str, ...]) -> None:
    code, text = runner.validate(config, overrides)
    click.echo(text)
    sys.exit(code)


if __name__ == "__main__":
    cli()
