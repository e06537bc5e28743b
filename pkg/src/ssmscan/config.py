"""Run configuration: one dataclass, a line-oriented config-file grammar, and
flag merging.

File grammar: one ``key = value`` pair per line, ``#`` starts a comment,
blank lines are ignored. Keys match RunConfig field names. CLI flags win
over file values; ``to_text`` emits the effective configuration back in the
same grammar.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Dict, Optional

from .connector import VARIANTS
from .errors import ConfigError
from .scans import MECHANISMS


@dataclass(frozen=True)
class RunConfig:
    """Toy-scale model shape and reproducibility knobs.

    ``seed`` is the single root seed; every component derives its own stream
    from it (see rng.split_seed). ``encoders`` selects one or two stub
    encoders ahead of fusion; the fused feature width is enc_dim * encoders.
    """

    seed: int = 0
    variant: str = "advanced"
    scan: str = "bsm"
    encoders: int = 2
    enc_dim: int = 24
    d_llm: int = 64
    d_hidden: int = 0      # 0 means the default: same width as d_llm
    d_ff: int = 0          # 0 means the default 2 * fused feature width
    n_heads: int = 4
    state_size: int = 8
    patch_size: int = 8
    lm_layers: int = 4
    max_gen: int = 48
    timing_path: str = ""

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.scan not in MECHANISMS:
            raise ConfigError(f"scan must be one of {MECHANISMS}, got {self.scan!r}")
        if self.encoders not in (1, 2):
            raise ConfigError(f"encoders must be 1 or 2, got {self.encoders}")
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")
        for name in ("enc_dim", "d_llm", "n_heads", "state_size",
                     "patch_size", "lm_layers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.d_hidden < 0 or self.d_ff < 0 or self.max_gen < 0:
            raise ConfigError("d_hidden, d_ff, and max_gen must be non-negative")
        if (2 * self.fused_dim) % self.n_heads:
            raise ConfigError(
                f"n_heads={self.n_heads} must divide the connector inner width "
                f"{2 * self.fused_dim}"
            )
        if (2 * self.d_llm) % self.n_heads:
            raise ConfigError(
                f"n_heads={self.n_heads} must divide the LM inner width {2 * self.d_llm}"
            )

    @property
    def fused_dim(self) -> int:
        return self.enc_dim * self.encoders

    @property
    def mlp_hidden(self) -> int:
        return self.d_hidden if self.d_hidden else self.d_llm

    @property
    def swiglu_dim(self) -> int:
        return self.d_ff if self.d_ff else 2 * self.fused_dim

    def to_text(self) -> str:
        lines = ["# effective run configuration"]
        for f in fields(self):
            lines.append(f"{f.name} = {getattr(self, f.name)}")
        return "\n".join(lines) + "\n"


_INT_KEYS = {
    "seed", "encoders", "enc_dim", "d_llm", "d_hidden", "d_ff", "n_heads",
    "state_size", "patch_size", "lm_layers", "max_gen",
}
_STR_KEYS = {"variant", "scan", "timing_path"}


def parse_config_text(text: str, source: str = "<config>") -> Dict[str, object]:
    values: Dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in _INT_KEYS:
            try:
                values[key] = int(value)
            except ValueError:
                raise ConfigError(f"{source}:{lineno}: {key} needs an integer, got {value!r}")
        elif key in _STR_KEYS:
            values[key] = value
        else:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
    return values


def load_config(path: Optional[str], overrides: Dict[str, object]) -> RunConfig:
    """Build a RunConfig from an optional file plus CLI overrides (flags win)."""
    values: Dict[str, object] = {}
    if path:
        with open(path) as fh:
            values.update(parse_config_text(fh.read(), path))
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**values)
