"""
Console helpers shared by the pipeline stages.
"""
import sys


def log(msg: str) -> None:
    """Print and flush so worker-process output shows up immediately."""
    print(msg)
    try:
        sys.stdout.flush()
    except Exception:
        pass


def warn(msg: str) -> None:
    log(f"⚠️  {msg}")


def banner(title: str, leading_newline: bool = True) -> None:
    if leading_newline:
        log("")
    log("=" * 60)
    log(title)
    log("=" * 60)
