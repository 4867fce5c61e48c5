from typing import Optional, List

from pydantic import BaseModel


class FieldMetadata(BaseModel):
    name: str
    type: str
    section: str
    description: Optional[str] = None
    default: Optional[str] = None
    example: Optional[str] = None


class MetadataResponse(BaseModel):
    fields: List[FieldMetadata]

    def names(self) -> List[str]:
        return [field.name for field in self.fields]
