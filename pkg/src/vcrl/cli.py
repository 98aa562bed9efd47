"""Command-line client for the experiment service.

Every subcommand talks HTTP to the service API.  Without --server an
in-process application instance is used, so batch runs need no separately
started server; with --server the same requests go to a remote instance.

Exit codes: 0 success, 1 any cell failed, 2 config error.
"""

from __future__ import annotations

import sys
import time

import click
import httpx

from .service.app import create_app

EXIT_OK = 0
EXIT_CELL_FAILED = 1
EXIT_CONFIG_ERROR = 2


def make_client(server: str | None):
    if server:
        return httpx.Client(base_url=server.rstrip("/"), timeout=None)
    from starlette.testclient import TestClient  # in-process ASGI transport

    return TestClient(create_app())


def _fail_config(response) -> None:
    detail = response.json().get("detail", response.text)
    click.echo(f"config error: {detail}", err=True)
    sys.exit(EXIT_CONFIG_ERROR)


@click.group()
def main():
    """Experiment runner for the value-consistent RL engine."""


@main.command()
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--seeds", default=None, help="Seed count N (1..N) or explicit list '1,3,7'.")
@click.option("--variant", default=None, help="Comma list of variants (VCR,SPR_only,MSE,MSE_A).")
@click.option("--env", "env_name", default=None, help="Comma list of environments.")
@click.option("--out", default=None, help="Output root directory.")
@click.option("--workers", default=None, type=int, help="Worker processes for cells.")
@click.option("--server", default=None, help="Service URL; default runs in-process.")
@click.option("--poll-interval", default=0.5, show_default=True, type=float)
def run(config_path, seeds, variant, env_name, out, workers, server, poll_interval):
    """Submit CONFIG_PATH as an experiment and wait for completion."""
    with open(config_path) as fh:
        config_text = fh.read()
    overrides = {}
    if seeds is not None:
        overrides["seeds"] = seeds
    if variant is not None:
        overrides["variant"] = variant
    if env_name is not None:
        overrides["env"] = env_name
    if out is not None:
        overrides["out"] = out
    if workers is not None:
        overrides["workers"] = str(workers)

    client = make_client(server)
    resp = client.post("/experiments",
                       json={"config_text": config_text, "overrides": overrides})
    if resp.status_code == 400:
        _fail_config(resp)
    resp.raise_for_status()
    job_id = resp.json()["job_id"]
    click.echo(f"job {job_id} submitted")

    while True:
        status = client.get(f"/experiments/{job_id}").json()
        if status["state"] != "running":
            break
        done = sum(1 for c in status["cells"] if c["status"] != "pending")
        click.echo(f"  {done}/{len(status['cells'])} cells finished", err=True)
        time.sleep(poll_interval)

    for cell in status["cells"]:
        line = f"{cell['env']}/{cell['variant']}/seed{cell['seed']}: {cell['status']}"
        if cell["final_return"] is not None:
            line += f" (return {cell['final_return']:.4f}, hns {cell['hns']:.4f})"
        if cell["error"]:
            line += f" [{cell['error']}]"
        click.echo(line)
    if status["error"]:
        click.echo(f"plan error: {status['error']}", err=True)
    if status["failed"] or status["state"] == "failed":
        sys.exit(EXIT_CELL_FAILED)
    sys.exit(EXIT_OK)


@main.command()
@click.argument("run_dirs", nargs=-1, required=True,
                type=click.Path(file_okay=False))
@click.option("--out", default=None, help="Directory for aggregate.csv/txt.")
@click.option("--server", default=None)
def aggregate(run_dirs, out, server):
    """Aggregate final scores (IQM, optimality gap) across run directories."""
    client = make_client(server)
    resp = client.post("/reports/aggregate",
                       json={"run_dirs": list(run_dirs), "out_dir": out})
    resp.raise_for_status()
    payload = resp.json()
    for row in payload["rows"]:
        click.echo(f"{row['env']:<12} {row['variant']:<9} seeds={row['num_seeds']} "
                   f"IQM={row['iqm_hns']:.4f} gap={row['optimality_gap']:.4f} "
                   f"median={row['median_return']:.4f}")
    for err in payload["errors"]:
        click.echo(f"error: {err}", err=True)
    if payload["csv_path"]:
        click.echo(f"wrote {payload['csv_path']}")
    sys.exit(EXIT_CELL_FAILED if payload["errors"] else EXIT_OK)


@main.command()
@click.argument("run_dirs", nargs=-1, required=True,
                type=click.Path(file_okay=False))
@click.option("--out", default=None, help="Path for the comparison CSV.")
@click.option("--server", default=None)
def qerror(run_dirs, out, server):
    """Per-step mean/std Q-error comparison across variants."""
    client = make_client(server)
    resp = client.post("/reports/qerror",
                       json={"run_dirs": list(run_dirs), "out_path": out})
    if resp.status_code == 400:
        click.echo(f"error: {resp.json().get('detail')}", err=True)
        sys.exit(EXIT_CELL_FAILED)
    resp.raise_for_status()
    payload = resp.json()
    for row in payload["rows"]:
        click.echo(f"step={row['step']} {row['variant']}: "
                   f"mean={row['mean']:.6f} std={row['std']:.6f}")
    for err in payload["errors"]:
        click.echo(f"error: {err}", err=True)
    if payload["csv_path"]:
        click.echo(f"wrote {payload['csv_path']}")
    sys.exit(EXIT_CELL_FAILED if payload["errors"] else EXIT_OK)


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8710, show_default=True, type=int)
def serve(host, port):
    """Start the experiment service."""
    import uvicorn

    uvicorn.run(create_app(), host=host, port=port)


if __name__ == "__main__":
    main()
