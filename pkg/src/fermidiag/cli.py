"""Command-line front end: a thin HTTP client of the service.

By default commands talk to an in-process instance of the FastAPI app
through an ASGI transport; pass --server URL to talk to a running
instance instead.  Exit codes: 0 success, 1 verification failure,
2 configuration error.
"""
from __future__ import annotations

import argparse
import asyncio
import json
import sys as _sys

import httpx
from pydantic import ValidationError

from .models import METHODS, NqRequest, RunConfig, VerifyRequest

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_CONFIG_ERROR = 2


class ConfigError(Exception):
    pass


def _load_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        first = exc.errors()[0]
        loc = ".".join(str(p) for p in first["loc"])
        raise ConfigError(f"invalid config field {loc}: {first['msg']}") from exc


def _post(server: str | None, path: str, payload: dict) -> dict:
    async def go():
        if server:
            transport = None
            base = server
        else:
            from .service import app

            transport = httpx.ASGITransport(app=app)
            base = "http://fermidiag.local"
        async with httpx.AsyncClient(
            transport=transport, base_url=base, timeout=None
        ) as client:
            resp = await client.post(path, json=payload)
            if resp.status_code in (400, 422):
                raise ConfigError(resp.json()["detail"])
            resp.raise_for_status()
            return resp.json()

    return asyncio.run(go())


def _write_or_print(text: str, out: str | None) -> None:
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        print(text, end="" if text.endswith("\n") else "\n")


def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def cmd_info(args) -> int:
    config = _load_config(args.config)
    data = _post(args.server, "/info", {"config": config.model_dump(mode="json")})
    if args.format == "json" or args.out:
        _write_or_print(_canonical_json(data), args.out)
        return EXIT_OK
    print(f"configuration {data['config_hash']}")
    print(f"  particles N = {data['particle_count']}")
    print(f"  transfer momenta |Gamma| = {data['transfer_count']}")
    print(f"  patches M = {data['patch_count']}")
    print(f"  oracle modes needed = {data['mode_count_estimate']}")
    print(f"  generator norm bound 2||S|| <= {data['generator_norm_bound']:.6g}")
    print(f"  convergence envelope e^bound = {data['convergence_envelope']:.6g}")
    print(f"  series tail beyond default order = {data['tail_at_default_order']:.3e}")
    for tr in data["transfers"]:
        counts = ", ".join(f"{a}: {c}" for a, c in sorted(tr["pair_counts"].items()))
        print(
            f"  k = {tuple(tr['k'])}: plus {tr['plus']} minus {tr['minus']}"
            f" pair counts {{{counts}}}"
        )
    return EXIT_OK


def _records_to_csv(records: list[dict]) -> str:
    lines = ["qx,qy,qz,side,method,n_max,value"]
    for r in records:
        n_max = "" if r["n_max"] is None else str(r["n_max"])
        lines.append(
            f"{r['q'][0]},{r['q'][1]},{r['q'][2]},{r['side']},{r['method']},"
            f"{n_max},{r['value']!r}"
        )
    return "\n".join(lines) + "\n"


def cmd_nq(args) -> int:
    config = _load_config(args.config)
    if args.q:
        q_list = []
        for spec in args.q:
            parts = spec.split(",")
            if len(parts) != 3:
                raise ConfigError(f"momentum {spec!r} is not of the form x,y,z")
            try:
                q_list.append(tuple(int(p) for p in parts))
            except ValueError as exc:
                raise ConfigError(f"momentum {spec!r} has non-integer parts") from exc
    else:
        q_list = None  # fall back to the config's q_list
    methods = [m.strip() for m in args.method.split(",")] if args.method else None
    try:
        req = NqRequest(
            config=config,
            methods=methods,
            q_list=q_list,
            n_max=args.order,
            threads=args.threads,
        )
    except ValidationError as exc:
        first = exc.errors()[0]
        raise ConfigError(f"invalid request: {first['msg']}") from exc
    data = _post(args.server, "/nq", req.model_dump(mode="json"))
    if args.format == "csv":
        _write_or_print(_records_to_csv(data["records"]), args.out)
    else:
        _write_or_print(_canonical_json(data), args.out)
    return EXIT_OK


def cmd_verify(args) -> int:
    config = _load_config(args.config)
    req = VerifyRequest(config=config, deep=args.deep, seed=args.seed)
    data = _post(args.server, "/verify", req.model_dump(mode="json"))
    if args.out:
        _write_or_print(_canonical_json(data), args.out)
    for check in data["checks"]:
        status = "PASS" if check["passed"] else "FAIL"
        print(f"{status}  {check['name']}: {check['detail']}")
    if data["passed"]:
        print("all checks passed")
        return EXIT_OK
    print("verification FAILED")
    return EXIT_VERIFY_FAILED


def cmd_export_patches(args) -> int:
    config = _load_config(args.config)
    data = _post(
        args.server, "/patches/export", {"config": config.model_dump(mode="json")}
    )
    _write_or_print(_canonical_json(data["summary"]), args.out)
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import app

    uvicorn.run(app, host=args.host, port=args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fermidiag",
        description="excitation-density engine for a patched Fermi-gas trial state",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON configuration file (defaults to the toy system)")
        p.add_argument("--server", help="URL of a running service; default is in-process")
        p.add_argument("--out", help="write the result to this path")

    p_info = sub.add_parser("info", help="system summary and convergence envelope")
    common(p_info)
    p_info.add_argument("--format", choices=("text", "json"), default="text")
    p_info.set_defaults(fn=cmd_info)

    p_nq = sub.add_parser("nq", help="excitation-density table")
    common(p_nq)
    p_nq.add_argument(
        "--method",
        default=None,
        help=f"comma-separated subset of {', '.join(METHODS)}",
    )
    p_nq.add_argument(
        "--q",
        action="append",
        help="momentum x,y,z (repeatable; default: every claimed shell momentum)",
    )
    p_nq.add_argument("--order", type=int, default=None, help="series order cap (even)")
    p_nq.add_argument("--threads", type=int, default=None)
    p_nq.add_argument("--seed", type=int, default=None)
    p_nq.add_argument("--format", choices=("json", "csv"), default="json")
    p_nq.set_defaults(fn=cmd_nq)

    p_verify = sub.add_parser("verify", help="run the invariant suite")
    common(p_verify)
    p_verify.add_argument("--deep", action="store_true", help="include slow checks")
    p_verify.add_argument("--seed", type=int, default=0)
    p_verify.set_defaults(fn=cmd_verify)

    p_export = sub.add_parser("export-patches", help="patch scheme summary as JSON")
    common(p_export)
    p_export.set_defaults(fn=cmd_export_patches)

    p_serve = sub.add_parser("serve", help="run the HTTP service")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8000)
    p_serve.set_defaults(fn=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=_sys.stderr)
        return EXIT_CONFIG_ERROR
    except httpx.HTTPError as exc:
        print(f"service error: {exc}", file=_sys.stderr)
        return EXIT_CONFIG_ERROR


if __name__ == "__main__":
    raise SystemExit(main())
