"""Configuration layer.

Values come from, in order of precedence: command-line flags, a flat
`key = value` config file, GGLAB_* environment variables (a .env file is
loaded first) and built-in defaults. Step functions, Phi factors and sets
are written as dotted keys in the config file:

    f1.breaks = 0.5
    f1.vals = 0, 1
    psi.intervals = 1:1
    phi.1-2.breaks = 0.5
    phi.1-2.vals = 0, 1
    set1.intervals = 0.5:1
"""

import logging
import os
import re
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

from dotenv import dotenv_values, load_dotenv

from gglab.identities.functionals import OverlapProduct, StepFunction
from gglab.services.schemas import CascadeSpec, EstimatorConfig

logger = logging.getLogger(__name__)

ENV_PREFIX = "GGLAB_"

ENV_FIELDS: Dict[str, Callable] = {
    "seed": int,
    "workers": int,
    "n_outer": int,
    "n_batches": int,
    "z_max": float,
    "truncation": int,
    "leaf_budget": int,
    "n_mu": int,
}

PHI_KEY = re.compile(r"^phi\.(\d+)-(\d+)\.(breaks|vals|intervals|scale)$")


def load_environment(dotenv_path: Optional[str] = None) -> Dict[str, object]:
    """Read GGLAB_* defaults after loading a .env file."""
    load_dotenv(dotenv_path)
    values = {}
    for key, cast in ENV_FIELDS.items():
        variable = ENV_PREFIX + key.upper()
        raw = os.getenv(variable)
        if raw is None or not raw.strip():
            continue
        try:
            values[key] = cast(raw.strip())
        except ValueError:
            raise ValueError(f"{variable} must be of type {cast.__name__}, got {raw!r}")
    return values


def _normalize_key(key: str) -> str:
    key = key.strip().lower()
    return key if "." in key else key.replace("-", "_")


def read_config_file(path) -> Dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    values = {_normalize_key(k): v.strip() for k, v in dotenv_values(path).items() if v is not None}
    logger.debug("read %d settings from %s", len(values), path)
    return values


def parse_floats(text) -> List[float]:
    if isinstance(text, (list, tuple)):
        return [float(x) for x in text]
    return [float(x) for x in str(text).replace(",", " ").split()]


def parse_ints(text) -> List[int]:
    if isinstance(text, (list, tuple)):
        return [int(x) for x in text]
    return [int(x) for x in str(text).replace(",", " ").split()]


def parse_intervals(text: str) -> List[tuple]:
    """'0.5:1, -1:-0.4' -> [(0.5, 1.0), (-1.0, -0.4)]."""
    intervals = []
    for chunk in str(text).split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        lower, sep, upper = chunk.partition(":")
        if not sep:
            raise ValueError(f"interval {chunk!r} must be written as a:b")
        intervals.append((float(lower), float(upper)))
    return intervals


def step_from(values: Dict[str, str], prefix: str) -> Optional[StepFunction]:
    """StepFunction from `prefix.breaks` / `prefix.vals`, or `prefix.intervals` (times `prefix.scale`)."""
    if f"{prefix}.intervals" in values:
        scale = float(values.get(f"{prefix}.scale", 1.0))
        return StepFunction.from_intervals(parse_intervals(values[f"{prefix}.intervals"]), inside=scale)
    if f"{prefix}.vals" in values:
        breaks = parse_floats(values.get(f"{prefix}.breaks", ""))
        return StepFunction(tuple(breaks), tuple(parse_floats(values[f"{prefix}.vals"])))
    if f"{prefix}.breaks" in values:
        raise ValueError(f"{prefix}.breaks given without {prefix}.vals")
    return None


def family_steps(values: Dict[str, str], n: int) -> List[StepFunction]:
    """f1..fn; missing functions are zero."""
    return [step_from(values, f"f{l}") or StepFunction.constant(0.0) for l in range(1, n + 1)]


def sets_from(values: Dict[str, str], n: int, default: Optional[StepFunction] = None) -> List[StepFunction]:
    sets = []
    for l in range(1, n + 1):
        member = step_from(values, f"set{l}") or default
        if member is None:
            raise ValueError(f"set{l}.intervals is required")
        sets.append(member)
    return sets


def phi_from(values: Dict[str, str]) -> OverlapProduct:
    """Product of per-pair factors `phi.l-l'.*`; the constant 1 if none are given."""
    pairs = sorted({(int(m.group(1)), int(m.group(2))) for m in map(PHI_KEY.match, values) if m})
    factors = {pair: step_from(values, f"phi.{pair[0]}-{pair[1]}") for pair in pairs}
    return OverlapProduct.of(factors, scale=float(values.get("phi.scale", 1.0)))


def resolve(key: str, flags: Dict[str, object], file_values: Dict[str, str], env: Dict[str, object], default=None, cast=None):
    """flag > config file > environment > default."""
    if flags.get(key) is not None:
        return flags[key]
    if key in file_values:
        return cast(file_values[key]) if cast else file_values[key]
    if key in env:
        return env[key]
    return default


def estimator_config(flags: Dict[str, object], file_values: Dict[str, str], env: Dict[str, object]) -> EstimatorConfig:
    fields = {
        "n_outer": int,
        "n_batches": int,
        "seed": int,
        "workers": int,
        "z_max": float,
        "truncation": int,
        "leaf_budget": int,
        "n_mu": int,
        "mu_source": str,
        "pd_threshold": float,
    }
    settings = {}
    for key, cast in fields.items():
        value = resolve(key, flags, file_values, env, cast=cast)
        if value is not None:
            settings[key] = value
    settings["progress"] = bool(flags.get("progress", False))
    settings["tail_correction"] = bool(flags.get("tail_correction")) or file_values.get("tail_correction", "").lower() in (
        "true",
        "1",
        "yes",
    )
    return EstimatorConfig(**settings)


def cascade_spec(
    flags: Dict[str, object], file_values: Dict[str, str], env: Dict[str, object], truncation: int
) -> CascadeSpec:
    """Cascade parameters; a lone --zeta means a one-level cascade with `truncation` atoms."""
    leaf_budget = resolve("leaf_budget", flags, file_values, env, default=4096, cast=int)
    zetas = resolve("zetas", flags, file_values, env, cast=parse_floats)
    if zetas is None:
        zeta = resolve("zeta", flags, file_values, env, default=0.5, cast=float)
        depth = resolve("depth", flags, file_values, env, default=1, cast=int)
        if int(depth) != 1:
            raise ValueError(f"a single zeta describes a one-level cascade, got depth {depth}; use --zetas")
        qs = parse_floats(resolve("qs", flags, file_values, env, default=[0.0, 1.0], cast=parse_floats))
        if len(qs) != 2:
            raise ValueError(f"a one-level cascade takes two overlap levels, got {len(qs)}")
        branching = resolve("branching", flags, file_values, env, cast=parse_ints)
        if branching is not None:
            branching = parse_ints(branching)
            if len(branching) != 1:
                raise ValueError(f"a one-level cascade takes one branching number, got {len(branching)}")
            truncation = branching[0]
        return CascadeSpec.one_level(zeta, n_atoms=truncation, q0=qs[0], q1=qs[1], leaf_budget=max(leaf_budget, truncation))
    zetas = parse_floats(zetas)
    depth = resolve("depth", flags, file_values, env, default=len(zetas), cast=int)
    qs = parse_floats(resolve("qs", flags, file_values, env, default=[i / depth for i in range(depth + 1)], cast=parse_floats))
    branching = resolve("branching", flags, file_values, env, cast=parse_ints)
    if branching is None:
        per_level = max(2, int(round(leaf_budget ** (1.0 / depth))))
        while per_level**depth > leaf_budget and per_level > 2:
            per_level -= 1
        branching = [per_level] * depth
    return CascadeSpec(depth=depth, zetas=zetas, qs=qs, branching=parse_ints(branching), leaf_budget=leaf_budget)


def group_ends(sizes: Sequence[int]) -> List[int]:
    ends, total = [], 0
    for size in sizes:
        total += int(size)
        ends.append(total)
    return ends
