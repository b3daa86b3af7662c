"""Test driver for assembled candidate+test programs.

Exit codes: 0 pass, 10 assertion failure, 11 runtime error,
12 load failure, 120 driver fault. The final stderr line is
always `PLUM:{STATUS}:{summary}`.
"""
import os
import sys

PASS, TESTFAIL, RUNTIME, LOADFAIL, FAULT = 0, 10, 11, 12, 120
NAMES = {PASS: "PASS", TESTFAIL: "TESTFAIL", RUNTIME: "RUNTIME", LOADFAIL: "LOADFAIL", FAULT: "FAULT"}
PROXY_VARS = ("http_proxy", "https_proxy", "ftp_proxy", "all_proxy", "no_proxy")


def finish(code, summary):
    summary = " ".join(str(summary).split())[:200]
    try:
        sys.stdout.flush()
    except Exception:
        pass
    sys.stderr.write("\nPLUM:%s:%s\n" % (NAMES[code], summary))
    sys.stderr.flush()
    os._exit(code)


def describe(exc):
    text = str(exc)
    return type(exc).__name__ + (": " + text if text else "")


def main(argv):
    smoke = False
    args = list(argv)
    if args and args[0] == "--smoke":
        smoke = True
        args = args[1:]
    if len(args) != 1:
        finish(FAULT, "usage: shim [--smoke] <program-file>")
    if os.environ.get("PLUM_NO_NETWORK") == "1":
        for name in list(os.environ):
            if name.lower() in PROXY_VARS:
                del os.environ[name]
    try:
        with open(args[0], "r", encoding="utf-8") as fh:
            source = fh.read()
    except OSError as exc:
        finish(FAULT, describe(exc))
    try:
        code = compile(source, args[0], "exec")
    except (SyntaxError, ValueError) as exc:
        finish(LOADFAIL, describe(exc))
    namespace = {"__name__": "__main__", "__file__": args[0], "__builtins__": __builtins__}
    try:
        exec(code, namespace)
    except SystemExit as exc:
        finish(LOADFAIL if smoke else RUNTIME, "SystemExit: %r" % (exc.code,))
    except AssertionError as exc:
        finish(LOADFAIL if smoke else TESTFAIL, describe(exc))
    except ImportError as exc:
        finish(LOADFAIL, describe(exc))
    except BaseException as exc:
        finish(LOADFAIL if smoke else RUNTIME, describe(exc))
    finish(PASS, "ok")


if __name__ == "__main__":
    try:
        main(sys.argv[1:])
    except SystemExit:
        raise
    except BaseException as exc:
        finish(FAULT, describe(exc))
