"""Sender-side routing schemes and a name-based factory."""

from .atomic import Landmark, Lnd, ShortestPath, landmark_paths, landmark_route, loop_erase, pick_landmarks
from .base import Pending, Scheme, SenderQueue, packetize
from .priceprobe import PriceProbe, price_probe_step
from .spider import Spider, SpiderFlow
from .waterfilling import Waterfilling, WaterfillingFlow, waterfilling_select

SCHEMES = {
    "spider": Spider,
    "waterfilling": Waterfilling,
    "shortest": ShortestPath,
    "landmark": Landmark,
    "lnd": Lnd,
    "priceprobe": PriceProbe,
}


def make_scheme(name: str, **params) -> Scheme:
    try:
        cls = SCHEMES[name]
    except KeyError:
        raise ValueError(f"unknown scheme {name!r}; choose from {', '.join(SCHEMES)}") from None
    return cls(**params)


__all__ = [
    "SCHEMES", "make_scheme", "Scheme", "Pending", "SenderQueue", "packetize",
    "Spider", "SpiderFlow", "Waterfilling", "WaterfillingFlow", "waterfilling_select",
    "ShortestPath", "Landmark", "Lnd", "PriceProbe", "price_probe_step",
    "landmark_route", "landmark_paths", "loop_erase", "pick_landmarks",
]
