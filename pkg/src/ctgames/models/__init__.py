"""Shipped model families: renewal, two-firm entry and the quality ladder."""

from .base import ModelFamily
from .entry import EntryFamily, entry_build
from .ladder import LadderConstants, LadderFamily, ladder_build, ladder_profits
from .renewal import RenewalFamily, renewal_build

FAMILIES = {"renewal": RenewalFamily, "entry": EntryFamily, "ladder": LadderFamily}


def make_family(name: str, **options) -> ModelFamily:
    """Instantiate a family by name with constructor options."""
    try:
        cls = FAMILIES[name]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; choose from {', '.join(FAMILIES)}") from None
    if name == "ladder":
        const_keys = set(LadderConstants.__dataclass_fields__)
        const = {k: options.pop(k) for k in list(options) if k in const_keys}
        if const:
            from .ladder import MARKET_SIZE

            const.setdefault("market_size", MARKET_SIZE.get(options.get("N", 2), 0.40))
            options["const"] = LadderConstants(**const)
    return cls(**options)


__all__ = [
    "FAMILIES", "ModelFamily", "make_family",
    "RenewalFamily", "renewal_build",
    "EntryFamily", "entry_build",
    "LadderFamily", "LadderConstants", "ladder_build", "ladder_profits",
]
