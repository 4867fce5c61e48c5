from pydantic import BaseModel, ConfigDict


class AALabBaseModel(BaseModel):
    """ Base class for mutable lab records, unknown keys are rejected"""
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class FrozenModel(BaseModel):
    """Read-only / immutable models (configuration, analytic queries)."""
    model_config = ConfigDict(
        frozen=True,
        populate_by_name=True,
        extra="forbid",
    )


class ArrayModel(BaseModel):
    """Models carrying numpy arrays."""
    model_config = ConfigDict(arbitrary_types_allowed=True, extra="forbid")
