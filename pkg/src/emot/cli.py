"""Command-line client.

Subcommands: solve, hedge, converge, oracle, catalog, validate.  By
default requests run against the in-process service app, so behaviour is
identical to the HTTP deployment; ``--server URL`` points the client at
a remote instance instead.

Exit codes: 0 success, 1 runtime error or unconverged, 2 infeasible,
64 schema / grammar violation.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import os
import sys

import httpx

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INFEASIBLE = 2
EXIT_SCHEMA = 64

_OK_STATUSES = ("optimal", "gap_certified")


class CliFailure(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _client(server: str | None) -> httpx.Client:
    if server:
        return httpx.Client(base_url=server, timeout=600.0)
    # deferred import keeps `emot catalog --help` fast
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        from starlette.testclient import TestClient

    from .service import app

    return TestClient(app, raise_server_exceptions=False)


def _read_scenario(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise CliFailure(EXIT_ERROR, f"cannot read {path}: {e}")
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise CliFailure(
            EXIT_SCHEMA,
            f"{path}: invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}",
        )


def _post(client: httpx.Client, endpoint: str, doc: dict, options: dict):
    try:
        resp = client.post(endpoint, json={"scenario": doc, "options": options})
    except httpx.HTTPError as e:
        raise CliFailure(EXIT_ERROR, f"request failed: {e}")
    if resp.status_code == 422:
        detail = resp.json().get("detail", resp.text)
        raise CliFailure(EXIT_SCHEMA, str(detail))
    if resp.status_code != 200:
        try:
            detail = resp.json().get("detail", resp.text)
        except ValueError:
            detail = resp.text
        raise CliFailure(EXIT_ERROR, str(detail))
    return resp.json()


def _write(out_dir: str | None, name: str, text: str) -> str:
    out_dir = out_dir or "."
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, name)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    return path


def _report_json(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def _options(args) -> dict:
    return {
        "both": bool(getattr(args, "both", False)),
        "backend": args.backend,
        "tol": args.tol,
        "seed": args.seed,
    }


def _solve_exit(payload: dict) -> int:
    status = payload["report"]["status"]
    if status == "infeasible":
        return EXIT_INFEASIBLE
    if status not in _OK_STATUSES:
        return EXIT_ERROR
    hedge = payload.get("hedge")
    if hedge is not None and hedge["status"] not in _OK_STATUSES:
        return EXIT_ERROR
    return EXIT_OK


def _solve_one(client, path, endpoint, args, multi: bool) -> int:
    doc = _read_scenario(path)
    payload = _post(client, endpoint, doc, _options(args))
    stem = os.path.splitext(os.path.basename(path))[0]
    name = f"{stem}.report.json" if multi else "report.json"
    report_path = _write(args.out, name, _report_json(payload))
    print(f"{payload['summary']}  [{report_path}]")
    return _solve_exit(payload)


def cmd_solve(args) -> int:
    with _client(args.server) as client:
        paths = args.scenario
        if len(paths) > 1 and args.jobs > 1:
            codes = {}
            with concurrent.futures.ThreadPoolExecutor(max_workers=args.jobs) as ex:
                futs = {
                    ex.submit(_solve_one, client, p, args.endpoint, args, True): p
                    for p in paths
                }
                for f in concurrent.futures.as_completed(futs):
                    codes[futs[f]] = f.result()
            return max(codes.values())
        code = EXIT_OK
        for p in paths:
            code = max(code, _solve_one(client, p, args.endpoint, args, len(paths) > 1))
        return code


def cmd_converge(args) -> int:
    doc = _read_scenario(args.scenario)
    if "sequence" not in doc or not doc.get("sequence"):
        raise CliFailure(EXIT_SCHEMA, "scenario has no sequence block")
    with _client(args.server) as client:
        payload = _post(client, "/converge", doc, _options(args))
    csv_path = _write(args.out, "converge.csv", payload["csv"])
    print(f"{payload['summary']}  [{csv_path}]")
    bad = [r for r in payload["result"]["rows"] if r["status"] not in _OK_STATUSES]
    if bad:
        print(f"{len(bad)} schedule step(s) did not converge", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


def cmd_catalog(args) -> int:
    with _client(args.server) as client:
        try:
            resp = client.get("/catalog")
        except httpx.HTTPError as e:
            raise CliFailure(EXIT_ERROR, f"request failed: {e}")
    print(json.dumps(resp.json(), sort_keys=True, indent=2))
    return EXIT_OK


def cmd_validate(args) -> int:
    doc = _read_scenario(args.scenario)
    with _client(args.server) as client:
        try:
            resp = client.post(
                "/validate", json={"scenario": doc, "options": {}}
            )
        except httpx.HTTPError as e:
            raise CliFailure(EXIT_ERROR, f"request failed: {e}")
    payload = resp.json()
    if payload["valid"]:
        print("valid")
        return EXIT_OK
    for err in payload["errors"]:
        print(err, file=sys.stderr)
    return EXIT_SCHEMA


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="emot",
        description="penalized martingale transport solver: scenarios in, "
        "reports and hedges out",
    )
    parser.add_argument("--server", default=None, help="remote service URL "
                        "(default: run in-process)")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, both_default=False):
        p.add_argument("--tol", type=float, default=None)
        p.add_argument("--backend", choices=["auto", "lp", "fw", "oracle"], default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("solve", help="measure-side minimization (optionally both sides)")
    p.add_argument("scenario", nargs="+")
    p.add_argument("--both", action="store_true", help="also run the hedging side")
    common(p)
    p.set_defaults(func=cmd_solve, endpoint="/solve")

    p = sub.add_parser("hedge", help="hedging-side maximization")
    p.add_argument("scenario", nargs="+")
    common(p)
    p.set_defaults(func=cmd_solve, endpoint="/hedge", both=False)

    p = sub.add_parser("converge", help="run the scenario's sequence schedule")
    p.add_argument("scenario")
    common(p)
    p.set_defaults(func=cmd_converge, both=False)

    p = sub.add_parser("oracle", help="closed-form / brute-force reference solve")
    p.add_argument("scenario", nargs="+")
    common(p)
    p.set_defaults(func=cmd_solve, endpoint="/oracle", both=False)

    p = sub.add_parser("catalog", help="list utilities, losses, penalties, cones")
    p.set_defaults(func=cmd_catalog)

    p = sub.add_parser("validate", help="schema-check a scenario file")
    p.add_argument("scenario")
    p.set_defaults(func=cmd_validate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliFailure as e:
        print(str(e), file=sys.stderr)
        return e.code


if __name__ == "__main__":
    sys.exit(main())
