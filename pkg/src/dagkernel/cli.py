"""Command-line client.

Talks to a running service when ``--server`` (or ``$DAGKERNEL_SERVER``) is
given, otherwise hosts the app in process. Exit codes: 0 success,
1 validation failure, 2 runtime failure, 3 usage error.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import httpx

from .service import HOME_ENV, Settings, create_app

SERVER_ENV = "DAGKERNEL_SERVER"

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2, 3


class _Cli(click.Group):
    """Group whose exit status always lands in {0, 1, 2, 3}."""

    def main(self, args=None, prog_name=None, complete_var=None, standalone_mode=True, **extra):
        try:
            code = super().main(args, prog_name, complete_var, standalone_mode=False, **extra)
        except click.UsageError as exc:
            exc.show()
            code = EXIT_USAGE
        except click.ClickException as exc:
            exc.show()
            code = EXIT_USAGE
        except click.Abort:
            click.echo("aborted", err=True)
            code = EXIT_USAGE
        code = code if isinstance(code, int) else EXIT_OK
        if standalone_mode:
            sys.exit(code)
        return code


def _client(ctx: click.Context):
    opts = ctx.find_root().params
    if opts.get("server"):
        return httpx.Client(base_url=opts["server"], timeout=None)
    from fastapi.testclient import TestClient

    settings = Settings(home=opts["home"]) if opts.get("home") else Settings()
    return TestClient(create_app(settings))


def _fail_usage(resp) -> None:
    try:
        detail = resp.json().get("detail")
    except ValueError:
        detail = resp.text
    raise click.UsageError(str(detail))


pipeline_arg = click.argument("path", type=click.Path(exists=True, dir_okay=False, path_type=Path))


@click.group(cls=_Cli)
@click.option("--server", envvar=SERVER_ENV, default=None, help="Base URL of a running service.")
@click.option("--home", envvar=HOME_ENV, default=None, type=click.Path(file_okay=False), help="Data directory.")
def cli(server, home):
    """Validate, run and inspect YAML pipelines."""


@cli.command()
@pipeline_arg
@click.pass_context
def validate(ctx, path: Path):
    """Print the validation report; exit 1 if it has errors."""
    with _client(ctx) as client:
        resp = client.post("/validate", json={"pipeline": path.read_text("utf-8")})
    report = resp.json()
    click.echo(json.dumps(report, indent=2))
    ctx.exit(EXIT_OK if report["passed"] else EXIT_INVALID)


@cli.command()
@pipeline_arg
@click.option("--backend", type=click.Choice(["inline", "isolated"]), default="inline", show_default=True)
@click.option("--max-parallel", type=click.IntRange(min=0), default=None, help="Worker cap (0 = unbounded).")
@click.option("--provider", default=None, help="Completion provider name (default: $DAGKERNEL_PROVIDER or mock).")
@click.option("--trace", "trace_path", type=click.Path(dir_okay=False, path_type=Path), default=None)
@click.option("--retry-delay", type=click.FloatRange(min=0), default=1.0, show_default=True)
@click.pass_context
def run(ctx, path: Path, backend, max_parallel, provider, trace_path, retry_delay):
    """Validate, then execute. Writes a JSON-lines trace beside the pipeline."""
    body = {
        "pipeline": path.read_text("utf-8"),
        "backend": backend,
        "max_parallel": max_parallel,
        "provider": provider,
        "retry_delay": retry_delay,
    }
    with _client(ctx) as client:
        resp = client.post("/run", json=body)
    if resp.status_code != 200:
        _fail_usage(resp)
    out = resp.json()
    if out["status"] == "invalid":
        click.echo(json.dumps(out["report"], indent=2))
        ctx.exit(EXIT_INVALID)
    trace_path = trace_path or path.with_name(f"{path.stem}.trace.jsonl")
    trace_path.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in out["trace"]), "utf-8")
    summary = {
        "status": out["status"],
        "error": out["error"],
        "error_type": out["error_type"],
        "records": len(out["trace"]),
        "trace": str(trace_path),
    }
    click.echo(json.dumps(summary, indent=2))
    ctx.exit(out["exit_code"])


@cli.command("list-modules")
@click.pass_context
def list_modules(ctx):
    """Print registered module names, one per line."""
    with _client(ctx) as client:
        names = [m["name"] for m in client.get("/modules").json()]
    for name in sorted(names):
        click.echo(name)


@cli.command("emit-schemas")
@click.argument("out", type=click.Path(dir_okay=False, path_type=Path))
@click.pass_context
def emit_schemas(ctx, out: Path):
    """Write the module schema document to OUT."""
    with _client(ctx) as client:
        text = client.get("/schemas").text
    out.write_text(text, "utf-8")
    click.echo(str(out))


@cli.command("export-dot")
@pipeline_arg
@click.option("-o", "--output", type=click.Path(dir_okay=False, path_type=Path), default=None)
@click.pass_context
def export_dot(ctx, path: Path, output):
    """Print (or write) the pipeline as a DOT digraph."""
    with _client(ctx) as client:
        resp = client.post("/dot", json={"pipeline": path.read_text("utf-8")})
    if resp.status_code != 200:
        click.echo(resp.json().get("detail", resp.text), err=True)
        ctx.exit(EXIT_INVALID)
    dot = resp.json()["dot"]
    if output:
        output.write_text(dot, "utf-8")
    else:
        click.echo(dot, nl=False)


@cli.command("export-store")
@click.argument("store")
@click.pass_context
def export_store(ctx, store: str):
    """Dump one record store as JSON."""
    with _client(ctx) as client:
        resp = client.get(f"/stores/{store}/export")
    if resp.status_code != 200:
        _fail_usage(resp)
    click.echo(resp.text, nl=False)


@cli.command("export-kg")
@click.option("--format", "fmt", type=click.Choice(["jsonl", "dot"]), default="jsonl", show_default=True)
@click.pass_context
def export_kg(ctx, fmt: str):
    """Dump the knowledge graph."""
    with _client(ctx) as client:
        click.echo(client.get("/kg/export", params={"format": fmt}).text, nl=False)


@cli.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=click.IntRange(1, 65535), default=8765, show_default=True)
@click.pass_context
def serve(ctx, host: str, port: int):
    """Run the HTTP service that the other commands can target with --server."""
    import uvicorn

    home = ctx.find_root().params.get("home")
    settings = Settings(home=home) if home else Settings()
    uvicorn.run(create_app(settings), host=host, port=port, log_level="info")


def main() -> None:
    cli.main(prog_name="dagkernel")


if __name__ == "__main__":
    main()
