"""File-driven command-line client for the liesteer service.

By default every command talks to an in-process service instance; pass
``--url`` to target a running server instead.  Exit codes: 0 success,
1 negative result (not certified, resonant chain, solver stall),
2 usage or validation error.  Result documents carry no timestamps, so
reruns with identical inputs and seed are byte-identical.
"""

from __future__ import annotations

import argparse
import json
import sys

import httpx

EXIT_OK = 0
EXIT_NEGATIVE = 1
EXIT_USAGE = 2


class ServiceClient:
    """HTTP client bound either to a remote server or to an in-process app."""

    def __init__(self, url: str | None = None):
        if url:
            self._client = httpx.Client(base_url=url, timeout=None)
        else:
            import warnings

            with warnings.catch_warnings():
                warnings.simplefilter("ignore", DeprecationWarning)
                from fastapi.testclient import TestClient

            from .service import create_app

            self._client = TestClient(create_app(), raise_server_exceptions=False)

    def post(self, path: str, payload: dict):
        resp = self._client.post(path, json=payload)
        if resp.status_code == 422:
            detail = resp.json().get("detail", resp.text)
            raise CommandError(str(detail))
        resp.raise_for_status()
        return resp.json()


class CommandError(Exception):
    pass


def _read_json(path: str):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise CommandError(f"cannot read {path}: {exc}")
    except json.JSONDecodeError as exc:
        raise CommandError(f"{path} is not valid JSON: {exc}")


def _write_json(path: str, doc) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _emit(doc, out: str | None) -> None:
    if out:
        _write_json(out, doc)
    else:
        json.dump(doc, sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")


def cmd_check(args, client: ServiceClient) -> int:
    system = _read_json(args.system)
    resp = client.post("/certify", {"system": system, "n0": args.n0, "nmax": args.nmax})
    _emit(resp["certificate"], args.out)
    if resp["certified"]:
        print(f"certified at n={resp['n']}", file=sys.stderr)
        return EXIT_OK
    print("not certified", file=sys.stderr)
    return EXIT_NEGATIVE


def cmd_chain(args, client: ServiceClient) -> int:
    system = _read_json(args.system)
    resp = client.post("/chain", {"system": system, "levels": args.levels})
    _emit(resp["report"], args.out)
    if not resp["connected"]:
        print("no chain: coupling graph disconnected", file=sys.stderr)
        return EXIT_NEGATIVE
    if resp["nonresonant"] and resp["degeneracy_hypothesis_ok"]:
        print("non-resonant connectedness chain found", file=sys.stderr)
        return EXIT_OK
    print("chain found but resonant or degeneracy hypothesis violated", file=sys.stderr)
    return EXIT_NEGATIVE


def cmd_simulate(args, client: ServiceClient) -> int:
    payload = {
        "system": _read_json(args.system),
        "control": _read_json(args.control),
        "state": _read_json(args.state),
        "cutoff": args.cutoff,
        "two_value": args.two_value,
    }
    resp = client.post("/simulate", payload)
    _emit(resp["state"], args.out)
    print(
        f"input norm {resp['input_norm']:.12f} -> output norm {resp['output_norm']:.12f} "
        f"over time {resp['total_time']:g}",
        file=sys.stderr,
    )
    return EXIT_OK


def cmd_bangbang(args, client: ServiceClient) -> int:
    payload = {
        "control": _read_json(args.control),
        "a": args.a,
        "k": args.k,
        "report": args.report,
    }
    resp = client.post("/bangbang", payload)
    if args.report:
        _emit(resp, args.out)
    else:
        _emit(resp["control"], args.out)
    print(
        f"primitive error {resp['primitive_error']:.3e} (bound {resp['primitive_bound']:.3e}), "
        f"L1 {resp['l1_input']:.6g} -> {resp['l1_output']:.6g}",
        file=sys.stderr,
    )
    return EXIT_OK


def cmd_synthesize(args, client: ServiceClient) -> int:
    payload = {
        "system": _read_json(args.system),
        "psi0": _read_json(args.psi0),
        "psi1": _read_json(args.psi1),
        "N": args.N,
        "tol": args.tol,
        "seed": args.seed,
        "budget": args.budget,
        "delta": args.delta,
    }
    resp = client.post("/synthesize", payload)
    _emit(resp["plan"], args.out)
    if resp["success"]:
        print(f"synthesized: residual {resp['plan']['residual']:.3e}", file=sys.stderr)
        return EXIT_OK
    message = resp["plan"].get("message") or resp["plan"].get("error", "synthesis failed")
    print(f"synthesis did not reach tolerance: {message}", file=sys.stderr)
    return EXIT_NEGATIVE


def cmd_verify(args, client: ServiceClient) -> int:
    payload = {
        "system": _read_json(args.system),
        "plan": _read_json(args.plan),
        "cutoffs": [int(c) for c in args.cutoffs.split(",")],
    }
    resp = client.post("/verify-plan", payload)
    _emit(resp["report"], args.out)
    ok = resp["report"]["stored_residual_consistent"]
    print("stored residual consistent" if ok else "stored residual MISMATCH", file=sys.stderr)
    return EXIT_OK if ok else EXIT_NEGATIVE


def cmd_serve(args, _client=None) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="liesteer",
        description=(
            "Controllability certification and two-valued control synthesis. "
            "All files are JSON with 1-based level indices; time is dimensionless (hbar = 1)."
        ),
    )
    parser.add_argument("--url", default=None, help="remote service URL (default: in-process)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", help="certify the controllability condition over a cutoff range")
    p.add_argument("--system", required=True)
    p.add_argument("--n0", type=int, required=True)
    p.add_argument("--nmax", type=int, required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("chain", help="search for a non-resonant connectedness chain")
    p.add_argument("--system", required=True)
    p.add_argument("--levels", type=int, required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_chain)

    p = sub.add_parser("simulate", help="propagate a state file under a control file")
    p.add_argument("--system", required=True)
    p.add_argument("--control", required=True)
    p.add_argument("--state", required=True)
    p.add_argument("--cutoff", type=int, required=True)
    p.add_argument("--two-value", dest="two_value", action="store_true",
                   help="use endpoint-Hamiltonian semantics; control values must be 0 or 1")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bangbang", help="convert a control to {0,a} values")
    p.add_argument("--control", required=True)
    p.add_argument("--a", type=float, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--report", action="store_true", help="emit the full error table")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_bangbang)

    p = sub.add_parser("synthesize", help="synthesize a {0,1} control matching a target projection")
    p.add_argument("--system", required=True)
    p.add_argument("--psi0", required=True)
    p.add_argument("--psi1", required=True)
    p.add_argument("--N", type=int, required=True)
    p.add_argument("--tol", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--budget", type=int, default=600)
    p.add_argument("--delta", type=float, default=0.2)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("verify", help="re-verify a plan file at a list of cutoffs")
    p.add_argument("--system", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--cutoffs", required=True, help="comma-separated cutoffs")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "serve":
        return cmd_serve(args)
    try:
        client = ServiceClient(args.url)
        return args.func(args, client)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
