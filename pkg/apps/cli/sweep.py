# apps/cli/sweep.py

from typing import Iterator

from pydantic import Field, ValidationError, field_validator

from apps.core.exception import InvalidRequestException
from apps.core.schema import CustomBaseModel
from apps.streaming.harness.schema import ExperimentConfig

DEFAULT_SWEEP_VALUES = (1, 2, 4, 8, 16, 32, 64)
SWEEPABLE_FIELDS = ("consumers", "producers", "num_conn", "prefetch", "work_queue_count", "message_count", "ack_batch")


class SweepSpec(CustomBaseModel):
    """
    One base configuration scaled along ``field``.

    Sweeping consumers leaves ``producers`` unset for work-sharing patterns,
    so producers follow consumers in lockstep.
    """
    base: ExperimentConfig
    field: str = "consumers"
    values: list[int] = Field(default_factory=lambda: list(DEFAULT_SWEEP_VALUES), min_length=1)

    @field_validator("field")
    @classmethod
    def validate_field(cls, v):
        if v not in SWEEPABLE_FIELDS:
            raise ValueError(f"cannot sweep '{v}' (choose from {', '.join(SWEEPABLE_FIELDS)})")
        return v

    @field_validator("values")
    @classmethod
    def validate_values(cls, v):
        if any(value < 1 for value in v):
            raise ValueError("sweep values must be positive")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("sweep values must be strictly increasing")
        return v

    def point(self, value: int) -> ExperimentConfig:
        data = self.base.model_dump()
        data[self.field] = value
        # consumer points already differ by canonical name
        if self.base.label:
            data["label"] = f"{self.base.label}_{self.field}{value}"
        elif self.field != "consumers":
            data["label"] = f"{self.field}{value}"
        try:
            return ExperimentConfig.model_validate(data)
        except ValidationError as e:
            raise InvalidRequestException(
                f"{self.field}={value}: {e.errors()[0]['msg']}", error_code="INVALID_CONFIG"
            )

    def points(self) -> Iterator[tuple[int, ExperimentConfig]]:
        for value in self.values:
            yield value, self.point(value)

    def combined_label(self) -> str:
        base = self.base
        return f"sweep_{base.architecture.value}_{base.pattern.value}_{base.workload}_{self.field}"


def parse_values(text: str | None) -> list[int]:
    """``1,2,4`` or ``1..8`` (powers of two); defaults to 1..64."""
    if not text:
        return list(DEFAULT_SWEEP_VALUES)
    text = text.strip()
    try:
        if ".." in text:
            low, high = (int(part) for part in text.split("..", 1))
            if low < 1:
                raise ValueError(text)
            values = []
            value = low
            while value <= high:
                values.append(value)
                value *= 2
            return values
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise InvalidRequestException(f"Invalid sweep values '{text}'", error_code="INVALID_CONFIG")
