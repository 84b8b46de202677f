"""Tiny helpers shared by the experiment scripts."""
import argparse
import dataclasses
import json
from pathlib import Path


def parse(cls):
    """Dataclass defaults, overridable as --field value on the command line."""
    p = argparse.ArgumentParser()
    for f in dataclasses.fields(cls):
        p.add_argument("--" + f.name.replace("_", "-"), type=type(f.default) if f.default is not None else str,
                       default=f.default)
    return cls(**vars(p.parse_args()))


def save(path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=float) + "\n")
    print("wrote", path)
