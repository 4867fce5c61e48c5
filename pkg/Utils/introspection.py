# utils/introspection.py
from enum import Enum
from typing import Any, List, get_origin, get_args, Dict

from pydantic import BaseModel
from pydantic_core import PydanticUndefined

from AALab.ConfigModels import LabConfig
from AALab.FieldMetadata import FieldMetadata, MetadataResponse


def get_type_name(py_type: Any) -> str:
    args = [arg for arg in get_args(py_type) if arg is not type(None)]
    if get_origin(py_type) not in (list, List, dict, Dict) and len(args) == 1:
        py_type = args[0]
    if get_origin(py_type) in (list, List):
        arg = get_args(py_type)[0] if get_args(py_type) else "any"
        return f"array[{get_type_name(arg)}]"
    elif get_origin(py_type) in (dict, Dict):
        dict_arg = get_args(py_type)
        return f"dict[{get_type_name(dict_arg[0])}, {get_type_name(dict_arg[1])}]"
    elif isinstance(py_type, type) and issubclass(py_type, Enum):
        return "enum[" + "|".join(member.value for member in py_type) + "]"
    elif py_type == bool:
        return "boolean"
    elif py_type == str:
        return "string"
    elif py_type == int:
        return "integer"
    elif py_type == float:
        return "float"
    elif py_type == Any:
        return "any"
    elif hasattr(py_type, "__name__"):
        return py_type.__name__
    return str(py_type)


def _default_text(field) -> str:
    try:
        value = field.get_default(call_default_factory=True)
    except TypeError:
        return None
    if value is PydanticUndefined or value is None:
        return None
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, BaseModel):
        return None
    return str(value)


def walk_model_fields(model: type[BaseModel], prefix: str = "", section: str = None) -> List[FieldMetadata]:
    """Recursively collect the settable keys of a configuration model.

    Nested models (optional or not) are walked into; a list of models is a
    single array-valued key, since it is replaced as a whole.
    """
    fields: List[FieldMetadata] = []
    for name, field in model.model_fields.items():
        field_name = f"{prefix}.{name}" if prefix else name
        current_section = section or name

        examples = field.examples or []
        example = str(examples[0]) if examples else None

        nested = []
        if get_origin(field.annotation) not in (list, List, dict, Dict):
            nested = [arg for arg in (get_args(field.annotation) or (field.annotation,))
                      if isinstance(arg, type) and issubclass(arg, BaseModel)]
        if nested:
            fields += walk_model_fields(nested[0], field_name, current_section)
            continue
        fields.append(FieldMetadata(
            name=field_name, type=get_type_name(field.annotation), section=current_section,
            description=field.description or "No description", default=_default_text(field), example=example,
        ))
    return fields


def config_catalogue() -> MetadataResponse:
    """Every ``section.key`` accepted by the configuration file and by ``--set``."""
    return MetadataResponse(fields=walk_model_fields(LabConfig))
