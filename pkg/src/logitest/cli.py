"""Command line entry point: ``logitest run | report | fixture``."""

from __future__ import annotations

import logging
import sys
import time

import click

from .errors import FatalSetup, PortInUse
from .orchestrator import RunConfig, run_campaign
from .reporting import rerender_summary


def _parse_headers(values: tuple[str, ...]) -> dict[str, str]:
    headers = {}
    for item in values:
        name, sep, value = item.partition(":")
        if not sep or not name.strip():
            raise click.BadParameter(f"expected NAME:VALUE, got {item!r}", param_hint="--header")
        headers[name.strip()] = value.strip()
    return headers


@click.group()
@click.option("-v", "--verbose", count=True, help="Increase log verbosity.")
def main(verbose: int) -> None:
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.option("--spec", "spec_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help="OpenAPI 3.x document (JSON or YAML).")
@click.option("--base-url", required=True, help="Base URL of the system under test.")
@click.option("--budget", default=1000, show_default=True, type=click.IntRange(min=1),
              help="Number of wire requests the campaign may issue.")
@click.option("--retry-limit", default=3, show_default=True, type=click.IntRange(min=0))
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--threshold", default=0.5, show_default=True, type=float,
              help="Cosine-similarity cut-off for relationship candidates.")
@click.option("--walk-max", default=10, show_default=True, type=click.IntRange(min=1))
@click.option("--timeout", default=30.0, show_default=True, type=float, help="Per-request timeout (s).")
@click.option("--header", "headers", multiple=True, help="Static header NAME:VALUE sent with every request.")
@click.option("--mock-llm", default=None, help="Mock script file, or a bundled script name.")
@click.option("--llm-model", default="gpt-4o-mini", show_default=True)
@click.option("--embedding-model", default="text-embedding-3-small", show_default=True)
@click.option("--temperature", default=None, type=float)
@click.option("--prompts-dir", default=None, type=click.Path(file_okay=False))
@click.option("--memory-journal", default=None, type=click.Path(dir_okay=False))
@click.option("--log-dir", default=None, type=click.Path(file_okay=False),
              help="Where exchanges.jsonl and run_log.jsonl go (default: --out).")
@click.option("--arg-cache", default=None, type=click.Path(dir_okay=False),
              help="JSON cache of embeddings and relationship judgments.")
@click.option("--dump-arg", is_flag=True, help="Write the relationship graph to OUT/arg.json.")
@click.option("--no-ref-params", is_flag=True, help="Do not retrieve reference parameters.")
@click.option("--no-reflections", is_flag=True, help="Do not retrieve failure reflections.")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
def run(spec_path, base_url, budget, retry_limit, seed, threshold, walk_max, timeout, headers,
        mock_llm, llm_model, embedding_model, temperature, prompts_dir, memory_journal, log_dir,
        arg_cache, dump_arg, no_ref_params, no_reflections, out_dir) -> None:
    """Run a logical-testing campaign against a REST system."""
    try:
        config = RunConfig(
            spec_path=spec_path, base_url=base_url, out_dir=out_dir, log_dir=log_dir,
            request_budget=budget, retry_limit=retry_limit, arg_threshold=threshold,
            walk_max=walk_max, seed=seed, use_ref_params=not no_ref_params,
            use_reflections=not no_reflections, timeout=timeout, headers=_parse_headers(headers),
            prompts_dir=prompts_dir, memory_journal=memory_journal, dump_arg=dump_arg,
            arg_cache=arg_cache, llm_model=llm_model, embedding_model=embedding_model,
            temperature=temperature, mock_llm=mock_llm)
    except ValueError as exc:
        raise click.UsageError(str(exc)) from exc
    try:
        run_campaign(config)
    except (FatalSetup, FileNotFoundError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    click.echo(rerender_summary(out_dir), nl=False)


@main.command()
@click.option("--out", "out_dir", required=True, type=click.Path(exists=True, file_okay=False))
def report(out_dir) -> None:
    """Re-render summary.txt from the JSON artifacts of a finished campaign."""
    click.echo(rerender_summary(out_dir), nl=False)


@main.command()
@click.option("--port", default=8080, show_default=True, type=int)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--bugs", default="B1,B2,B3,B4", show_default=True,
              help="Comma-separated seeded bugs to enable (empty for none).")
@click.option("--no-seed", is_flag=True, help="Start without the seeded pet 7.")
def fixture(port, host, bugs, no_seed) -> None:
    """Serve the petstore fixture until interrupted."""
    from .fixture import serve_fixture

    enabled = {b.strip().upper() for b in bugs.split(",") if b.strip()}
    try:
        handle = serve_fixture(port, seed_data=not no_seed, bugs=enabled, host=host)
    except (PortInUse, ValueError) as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo(f"fixture petstore on http://{host}:{handle.port} (bugs: {','.join(sorted(enabled)) or 'none'})")
    click.echo(f"OpenAPI document at http://{host}:{handle.port}/openapi")
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        handle.stop()


if __name__ == "__main__":
    main()
