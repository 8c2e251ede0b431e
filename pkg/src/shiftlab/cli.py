"""Command-line front end.

The CLI is a thin HTTP client: every run or grid goes through the service
API. By default it mounts the service in-process (no socket involved), so
`shiftlab run ...` works standalone; pass --server to drive a remote
instance started with `shiftlab serve`.
"""
from __future__ import annotations

import argparse
import asyncio
import csv
import json
import sys
from pathlib import Path

import httpx

from . import __version__
from .config import PRESETS, load_config_file, parse_grid_config, parse_run_config, preset_config
from .errors import ConfigError, ShiftLabError
from .runlog import load_runlog

POLL_SECONDS = 0.2


class ServiceClient:
    """Async httpx client against either a remote server or the in-process app."""

    def __init__(self, server: str | None):
        if server:
            self._client = httpx.AsyncClient(base_url=server, timeout=60.0)
        else:
            from .service.app import create_app

            transport = httpx.ASGITransport(app=create_app())
            self._client = httpx.AsyncClient(
                transport=transport, base_url="http://shiftlab.internal", timeout=60.0
            )

    async def __aenter__(self):
        return self

    async def __aexit__(self, *exc):
        await self._client.aclose()

    async def submit_and_wait(self, path: str, payload: dict) -> dict:
        resp = await self._client.post(path, json=payload)
        if resp.status_code == 422:
            raise ConfigError(_format_http_422(resp.json()))
        resp.raise_for_status()
        job_id = resp.json()["job_id"]
        while True:
            status = (await self._client.get(f"/jobs/{job_id}")).json()
            if status["state"] == "failed":
                raise ShiftLabError(status["error"] or "job failed")
            if status["state"] == "done":
                break
            await asyncio.sleep(POLL_SECONDS)
        result = await self._client.get(f"/jobs/{job_id}/result")
        result.raise_for_status()
        return result.json()

    async def post(self, path: str, payload: dict) -> dict:
        resp = await self._client.post(path, json=payload)
        if resp.status_code == 422:
            raise ConfigError(_format_http_422(resp.json()))
        resp.raise_for_status()
        return resp.json()


def _format_http_422(body: dict) -> str:
    detail = body.get("detail")
    if isinstance(detail, str):
        return detail
    lines = ["invalid request:"]
    for item in detail or []:
        loc = ".".join(str(p) for p in item.get("loc", []))
        lines.append(f"  field '{loc}': {item.get('msg')}")
    return "\n".join(lines)


def _load_run_config(args) -> dict:
    if args.preset and args.config:
        raise ConfigError("pass either --preset or --config, not both")
    if args.preset:
        doc = preset_config(args.preset).model_dump(mode="json")
    elif args.config:
        doc = load_config_file(args.config)
    else:
        raise ConfigError("a run needs --config PATH or --preset NAME")
    if args.seed is not None:
        doc["seed"] = args.seed
    parse_run_config(doc)  # fail fast with field-level diagnostics
    return doc


def cmd_run(args) -> int:
    doc = _load_run_config(args)

    async def go():
        async with ServiceClient(args.server) as client:
            return await client.submit_and_wait(
                "/runs", {"config": doc, "out_dir": args.out}
            )

    result = asyncio.run(go())
    final = result["final_accuracy"]
    print(f"run complete: final accuracy {final:.4f}" if final is not None else "run complete")
    print(f"runlog: {result['runlog_path']}")
    return 0


def cmd_grid(args) -> int:
    if not args.config:
        raise ConfigError("grid needs --config PATH with a grid document")
    doc = load_config_file(args.config)
    if args.workers is not None:
        doc["workers"] = args.workers
    parse_grid_config(doc)

    async def go():
        async with ServiceClient(args.server) as client:
            return await client.submit_and_wait("/grids", {"grid": doc, "out_dir": args.out})

    result = asyncio.run(go())
    failed = 0
    for cell in result["cells"]:
        line = f"[{cell['status']:>6}] {cell['scheme']} / {cell['strategy']} / seed {cell['seed']}"
        if cell["status"] != "ok":
            failed += 1
            line += f" :: {cell.get('error', '')}"
        print(line)
    print(f"curves: {result['curves_path']}")
    if failed:
        print(f"{failed}/{len(result['cells'])} cells failed", file=sys.stderr)
        return 1
    return 0


def _collect_runlogs(paths: list[str]) -> list[dict]:
    docs = []
    for raw in paths:
        path = Path(raw)
        if path.is_dir():
            found = sorted(path.rglob("runlog.json"))
            if not found:
                raise ConfigError(f"no runlog.json files under {path}")
            docs.extend(load_runlog(p) for p in found)
        else:
            docs.append(load_runlog(path))
    return docs


def cmd_curves(args) -> int:
    docs = _collect_runlogs(args.logs)

    async def go():
        async with ServiceClient(args.server) as client:
            return await client.post("/curves", {"runlogs": docs})

    result = asyncio.run(go())
    if args.out:
        Path(args.out).write_text(result["csv"])
        print(f"wrote {args.out} ({len(result['rows'])} rows)")
    else:
        sys.stdout.write(result["csv"])
    return 0


def cmd_inspect_scores(args) -> int:
    """Dump one round's candidate scores, best first."""
    path = Path(args.scores)
    if path.is_dir():
        path = path / "scores" / f"round_{args.round:03d}.csv"
    if not path.exists():
        raise ConfigError(f"no score file at {path}")
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    rows.sort(key=lambda r: (-float(r["score"]) if r["score"] else 0.0, int(r["index"])))
    print(f"{'index':>8} {'score':>12} {'diversity':>12} {'uncertainty':>12} selected")
    for row in rows:
        print(
            f"{row['index']:>8} "
            f"{_fmt(row['score']):>12} {_fmt(row['diversity_cue']):>12} "
            f"{_fmt(row['uncertainty_cue']):>12} {'*' if row['selected'] == '1' else ''}"
        )
    return 0


def _fmt(value: str) -> str:
    return f"{float(value):.6f}" if value else "-"


def cmd_serve(args) -> int:
    import uvicorn

    from .service.app import create_app

    uvicorn.run(create_app(job_workers=args.job_workers), host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shiftlab",
        description="Active learning under domain shift: runs, grids, and curve tables.",
    )
    parser.add_argument("--version", action="version", version=f"shiftlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute one configured run")
    run.add_argument("--config", help="YAML/JSON run configuration")
    run.add_argument("--preset", choices=sorted(PRESETS), help="named built-in configuration")
    run.add_argument("--seed", type=int, default=None, help="override the config seed")
    run.add_argument("--out", default=None, help="output directory")
    run.add_argument("--server", default=None, help="remote service URL (default: in-process)")
    run.set_defaults(fn=cmd_run)

    grid = sub.add_parser("grid", help="cross schemes x strategies x seeds")
    grid.add_argument("--config", help="YAML/JSON grid configuration")
    grid.add_argument("--workers", type=int, default=None, help="worker pool size")
    grid.add_argument("--out", default=None, help="output directory")
    grid.add_argument("--server", default=None)
    grid.set_defaults(fn=cmd_grid)

    curves = sub.add_parser("curves", help="aggregate run logs into a curve table")
    curves.add_argument("logs", nargs="+", help="runlog.json files or directories of runs")
    curves.add_argument("--out", default=None, help="write CSV here instead of stdout")
    curves.add_argument("--server", default=None)
    curves.set_defaults(fn=cmd_curves)

    inspect = sub.add_parser("inspect-scores", help="dump a round's candidate scores")
    inspect.add_argument("scores", help="score CSV, or a run directory with --round")
    inspect.add_argument("--round", type=int, default=1, help="round number inside a run dir")
    inspect.set_defaults(fn=cmd_inspect_scores)

    serve = sub.add_parser("serve", help="start the HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    serve.add_argument("--job-workers", type=int, default=2)
    serve.set_defaults(fn=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except ShiftLabError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except httpx.HTTPError as err:
        print(f"service error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
