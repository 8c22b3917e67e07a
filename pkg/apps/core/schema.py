from pydantic import BaseModel, ConfigDict


class CustomBaseModel(BaseModel):
    """Base for every streaming schema: unknown fields fail closed, instances are immutable."""

    model_config = ConfigDict(extra="forbid", frozen=True, use_enum_values=False)
