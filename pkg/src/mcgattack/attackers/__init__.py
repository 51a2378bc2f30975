"""Query-based black-box attackers sharing one interface."""

from ..errors import ConfigError
from .base import Attacker, Episode
from .nes import NESAttack, nes_gradient
from .signhunter import SignHunterAttack
from .simba import SimBADCTAttack, dct_directions
from .square import SquareAttack, p_selection

ATTACKERS = {
    "square": SquareAttack,
    "signhunter": SignHunterAttack,
    "simba_dct": SimBADCTAttack,
    "nes": NESAttack,
}


def make_attacker(name: str, **params) -> Attacker:
    try:
        cls = ATTACKERS[name]
    except KeyError:
        raise ConfigError(f"unknown attacker {name!r}; choose from {sorted(ATTACKERS)}") from None
    return cls(**params)


__all__ = [
    "ATTACKERS",
    "Attacker",
    "Episode",
    "NESAttack",
    "SignHunterAttack",
    "SimBADCTAttack",
    "SquareAttack",
    "dct_directions",
    "make_attacker",
    "nes_gradient",
    "p_selection",
]
