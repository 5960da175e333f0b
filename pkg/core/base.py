from __future__ import annotations

from typing import Any


def forbid_instantiation[C: type](cls: C) -> C:
    """
    Class decorator for abstract bases such as textures: constructing the decorated class itself fails, its subclasses
    construct normally.

    :raises TypeError: If the decorated class is instantiated directly.
    """

    def __new__(subcls: type, *args: Any, **kwargs: Any) -> Any:
        if subcls is cls:
            raise TypeError(f"{cls.__qualname__} is abstract, construct one of {[sub.__qualname__ for sub in cls.__subclasses__()]}.")
        return object.__new__(subcls)

    cls.__new__ = staticmethod(__new__)  # type: ignore[method-assign]
    return cls
