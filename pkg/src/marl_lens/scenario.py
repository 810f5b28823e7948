"""Scenario names for the foraging and warehouse tasks.

Two grammars are understood::

    Foraging[-<sight>s]-<W>x<H>-<agents>p-<food>f[-coop]-v<k>
    rware-<size>-<agents>ag[-<diff>]-v<k>

Parsing is strict: numbers carry no leading zeros, so every accepted name is
canonical and ``render_scenario(parse_scenario(name)) == name`` holds.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Optional

from .errors import MalformedName, UnknownEnvPrefix


class EnvKind(str, Enum):
    LBF = "LBF"
    RWARE = "RWARE"


# Grid (width, height) for each warehouse size class. medium/large are accepted
# by the grammar but have no known dimensions; the env refuses to build them.
RWARE_SIZES = {
    "tiny": (11, 11),
    "small": (11, 20),
    "medium": None,
    "large": None,
}

_NUM = r"[1-9][0-9]*"
_LBF_RE = re.compile(
    rf"Foraging(?:-(?P<sight>{_NUM})s)?-(?P<w>{_NUM})x(?P<h>{_NUM})"
    rf"-(?P<agents>{_NUM})p-(?P<food>{_NUM})f(?P<coop>-coop)?-(?P<version>v[0-9]+)",
    re.ASCII,
)
_RWARE_RE = re.compile(
    rf"rware-(?P<size>[a-z]+)-(?P<agents>{_NUM})ag(?:-(?P<diff>[a-z]+))?"
    rf"-(?P<version>v[0-9]+)",
    re.ASCII,
)

BENCHMARK_SCENARIOS = (
    "Foraging-2s-8x8-2p-2f-coop-v2",
    "Foraging-8x8-2p-2f-coop-v2",
    "Foraging-2s-10x10-3p-3f-v2",
    "Foraging-10x10-3p-3f-v2",
    "Foraging-15x15-3p-5f-v2",
    "Foraging-15x15-4p-3f-v2",
    "Foraging-15x15-4p-5f-v2",
    "rware-tiny-2ag-v1",
    "rware-tiny-4ag-v1",
    "rware-small-4ag-v1",
)


@dataclass(frozen=True)
class Scenario:
    env_kind: EnvKind
    grid_w: Optional[int]
    grid_h: Optional[int]
    n_agents: int
    n_food: int = 0
    sight: Optional[int] = None
    coop: bool = False
    size_class: Optional[str] = None
    difficulty: str = ""
    version: str = "v1"

    @property
    def name(self) -> str:
        return render_scenario(self)


def _malformed(name: str, why: str) -> MalformedName:
    return MalformedName(f"{name!r}: {why}")


def parse_scenario(name: str) -> Scenario:
    """Parse a scenario name into a :class:`Scenario`.

    Raises
    ------
    UnknownEnvPrefix
        The name starts with neither ``Foraging`` nor ``rware-``.
    MalformedName
        A segment is missing, non-numeric or out of range.
    """
    if not isinstance(name, str) or not name:
        raise MalformedName("scenario name must be a non-empty string")

    if name.startswith("Foraging"):
        m = _LBF_RE.fullmatch(name)
        if m is None:
            raise _malformed(name, "does not match Foraging[-<s>s]-<W>x<H>-<n>p-<f>f[-coop]-v<k>")
        w, h = int(m["w"]), int(m["h"])
        sight = int(m["sight"]) if m["sight"] else None
        if sight is not None and sight > max(w, h):
            raise _malformed(name, f"sight {sight} exceeds grid extent {max(w, h)}")
        return Scenario(
            env_kind=EnvKind.LBF,
            grid_w=w,
            grid_h=h,
            n_agents=int(m["agents"]),
            n_food=int(m["food"]),
            sight=sight,
            coop=m["coop"] is not None,
            version=m["version"],
        )

    if name.startswith("rware-"):
        m = _RWARE_RE.fullmatch(name)
        if m is None:
            raise _malformed(name, "does not match rware-<size>-<n>ag[-<diff>]-v<k>")
        size = m["size"]
        if size not in RWARE_SIZES:
            raise _malformed(name, f"unknown size class {size!r}")
        dims = RWARE_SIZES[size]
        return Scenario(
            env_kind=EnvKind.RWARE,
            grid_w=dims[0] if dims else None,
            grid_h=dims[1] if dims else None,
            n_agents=int(m["agents"]),
            size_class=size,
            difficulty=m["diff"] or "",
            version=m["version"],
        )

    raise UnknownEnvPrefix(f"{name!r}: expected a 'Foraging' or 'rware-' prefix")


def render_scenario(s: Scenario) -> str:
    if s.env_kind == EnvKind.LBF:
        sight = f"-{s.sight}s" if s.sight is not None else ""
        coop = "-coop" if s.coop else ""
        return (
            f"Foraging{sight}-{s.grid_w}x{s.grid_h}-{s.n_agents}p-{s.n_food}f{coop}-{s.version}"
        )
    diff = f"-{s.difficulty}" if s.difficulty else ""
    return f"rware-{s.size_class}-{s.n_agents}ag{diff}-{s.version}"
