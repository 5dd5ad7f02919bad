"""Generation-argument schema and validation.

The canonical schema covers the community-standard argument surface for
diffusion-style image models: sampler, steps, cfg_scale, width, height,
seed, negative_prompt, clip_skip. Every argument set that crosses a module
boundary is validated against a schema; a valid set always carries one
value per schema field.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Iterable, Mapping

from .errors import ArgumentError

ArgValue = int | float | str
ArgumentSet = dict[str, ArgValue]


def canon_enum(value: str) -> str:
    """Canonical form for enum values: trimmed, lowercase, single spaces."""
    return " ".join(value.strip().lower().split())


SAMPLERS = (
    "euler",
    "euler a",
    "heun",
    "lms",
    "ddim",
    "plms",
    "unipc",
    "dpm2",
    "dpm2 a",
    "dpm++ 2m",
    "dpm++ 2m karras",
    "dpm++ sde",
    "dpm++ sde karras",
)


@dataclass(frozen=True)
class ArgumentField:
    """Spec for one argument: value kind, bounds or allowed values, default."""

    name: str
    kind: str  # "integer" | "real" | "string" | "enum"
    default: ArgValue
    minimum: float | None = None
    maximum: float | None = None
    choices: tuple[str, ...] | None = None
    multiple_of: int | None = None

    def coerce(self, raw: Any) -> ArgValue:
        """Convert a raw (possibly string) value to the field's canonical form.

        Raises ArgumentError naming the field on any violation.
        """
        if self.kind == "integer":
            try:
                if isinstance(raw, bool):
                    raise ValueError
                value: ArgValue = int(str(raw).strip()) if not isinstance(raw, int) else raw
            except ValueError:
                raise ArgumentError(f"{self.name}: not an integer: {raw!r}", key=self.name)
        elif self.kind == "real":
            try:
                value = float(str(raw).strip()) if not isinstance(raw, (int, float)) else float(raw)
            except ValueError:
                raise ArgumentError(f"{self.name}: not a number: {raw!r}", key=self.name)
        elif self.kind == "enum":
            if not isinstance(raw, str):
                raise ArgumentError(f"{self.name}: expected a string, got {raw!r}", key=self.name)
            value = canon_enum(raw)
            assert self.choices is not None
            if value not in self.choices:
                raise ArgumentError(
                    f"{self.name}: {raw!r} is not one of the allowed values", key=self.name
                )
        elif self.kind == "string":
            if not isinstance(raw, str):
                raise ArgumentError(f"{self.name}: expected a string, got {raw!r}", key=self.name)
            value = raw.strip()
        else:
            raise ArgumentError(f"{self.name}: unknown field kind {self.kind!r}", key=self.name)

        if self.kind in ("integer", "real"):
            num = float(value)  # type: ignore[arg-type]
            if self.minimum is not None and num < self.minimum:
                raise ArgumentError(
                    f"{self.name}: {value} below minimum {self.minimum}", key=self.name
                )
            if self.maximum is not None and num > self.maximum:
                raise ArgumentError(
                    f"{self.name}: {value} above maximum {self.maximum}", key=self.name
                )
            if self.multiple_of is not None and int(value) % self.multiple_of != 0:
                raise ArgumentError(
                    f"{self.name}: {value} is not a multiple of {self.multiple_of}", key=self.name
                )
        return value


class ArgumentSchema:
    """Ordered collection of ArgumentFields with unique names."""

    def __init__(self, fields: Iterable[ArgumentField]):
        self.fields: dict[str, ArgumentField] = {}
        for f in fields:
            if f.name in self.fields:
                raise ArgumentError(f"duplicate schema field {f.name!r}", key=f.name)
            self.fields[f.name] = f
        # defaults must themselves be valid
        for f in self.fields.values():
            f.coerce(f.default)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self.fields)

    def defaults(self) -> ArgumentSet:
        return {name: f.coerce(f.default) for name, f in self.fields.items()}

    def validate(self, values: Mapping[str, Any]) -> ArgumentSet:
        """Validate a complete argument set. Unknown keys are rejected,
        missing keys reported; values are coerced to canonical form.
        """
        out: ArgumentSet = {}
        for name, f in self.fields.items():
            if name not in values:
                raise ArgumentError(f"missing argument {name!r}", key=name)
            out[name] = f.coerce(values[name])
        unknown = set(values) - set(self.fields)
        if unknown:
            raise ArgumentError(f"unknown arguments: {sorted(unknown)}")
        return out

    def fill(self, partial: Mapping[str, Any], defaults: Mapping[str, Any]) -> ArgumentSet:
        """Complete `partial` with values from `defaults` (unknown keys in
        `partial` are ignored) and validate the result."""
        merged = {name: partial.get(name, defaults[name]) for name in self.fields}
        return self.validate(merged)

    def matches(self, a: Any, b: Any, name: str) -> bool:
        """Field-level equality used by configuration accuracy: numbers by
        exact value, strings trimmed case-insensitive, enums by canonical form."""
        f = self.fields[name]
        if f.kind in ("integer", "real"):
            return float(f.coerce(a)) == float(f.coerce(b))
        if f.kind == "enum":
            return f.coerce(a) == f.coerce(b)
        return str(a).strip().lower() == str(b).strip().lower()


def default_schema() -> ArgumentSchema:
    """The canonical generation-argument schema."""
    return ArgumentSchema(
        [
            ArgumentField("sampler", "enum", "euler a", choices=SAMPLERS),
            ArgumentField("steps", "integer", 20, minimum=1, maximum=150),
            ArgumentField("cfg_scale", "real", 7.0, minimum=0.0, maximum=30.0),
            ArgumentField("width", "integer", 512, minimum=64, maximum=2048, multiple_of=8),
            ArgumentField("height", "integer", 512, minimum=64, maximum=2048, multiple_of=8),
            ArgumentField("seed", "integer", -1, minimum=-1),
            ArgumentField("negative_prompt", "string", ""),
            ArgumentField("clip_skip", "integer", 1, minimum=1, maximum=12),
        ]
    )
