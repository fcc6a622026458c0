"""Module entry point so ``python -m predictor_bridge`` serves a model."""

from .cli import main

if __name__ == "__main__":
    raise SystemExit(main())
