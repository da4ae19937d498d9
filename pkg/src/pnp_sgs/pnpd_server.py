"""Reference PNPD server.

``python -m pnp_sgs.pnpd_server identity`` echoes every payload unchanged;
``analytic --tau2 V --m0 PATH|VALUE --schedule linear|cosine`` runs the exact
Gaussian-conjugate reverse chain. Used for loopback testing of external runs.
"""
from __future__ import annotations

import argparse
import sys

import numpy as np

from . import protocol
from .denoiser import GaussianConjugateDenoiser, run_reverse
from .errors import ProtocolError
from .schedule import build_cosine_schedule, build_linear_schedule


def serve(handler, stdin=None, stdout=None):
    stdin = stdin or sys.stdin.buffer
    stdout = stdout or sys.stdout.buffer
    read = protocol.exact_reader(stdin)
    while True:
        magic = stdin.read(4)
        if not magic:
            return 0
        pending = [magic]

        def framed(n, _pending=pending):
            if _pending:
                head = _pending.pop()
                return head + (read(n - len(head)) if n > len(head) else b"")
            return read(n)
        try:
            u, t_start, t_stop = protocol.read_request(framed)
        except ProtocolError as exc:
            # framing is lost after a bad header; report and stop
            stdout.write(protocol.encode_error(str(exc)))
            stdout.flush()
            return 1
        try:
            out = handler(u, t_start, t_stop)
        except Exception as exc:  # noqa: BLE001 - reported to the client
            stdout.write(protocol.encode_error(f"{type(exc).__name__}: {exc}"))
        else:
            stdout.write(protocol.encode_ok(out))
        stdout.flush()


def main(argv=None):
    p = argparse.ArgumentParser(prog="pnpd-server")
    sub = p.add_subparsers(dest="mode", required=True)
    sub.add_parser("identity")
    a = sub.add_parser("analytic")
    a.add_argument("--tau2", type=float, required=True)
    a.add_argument("--m0", default="0.5")
    a.add_argument("--schedule", choices=["linear", "cosine"], default="linear")
    a.add_argument("--T", type=int, default=1000)
    a.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    if args.mode == "identity":
        handler = lambda u, t_start, t_stop: u  # noqa: E731
    else:
        sched = build_linear_schedule(args.T) if args.schedule == "linear" else build_cosine_schedule(args.T)
        try:
            m0 = float(args.m0)
        except ValueError:
            m0 = np.load(args.m0)
        model = GaussianConjugateDenoiser(m0, args.tau2, sched)
        rng = np.random.default_rng(args.seed)
        handler = lambda u, t_start, t_stop: run_reverse(model, u, t_start, t_stop, rng)  # noqa: E731
    return serve(handler)


if __name__ == "__main__":
    sys.exit(main())
