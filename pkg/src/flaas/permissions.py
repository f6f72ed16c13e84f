"""Cross-application permission registry: default-deny, per-capability, directional.

A grant is a (source app, target scope, capability) fact. Nothing is implied:
no symmetry, no capability subsumption. Checks are linearizable with respect
to grant/revoke under the registry lock.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass

from .errors import ConfigurationError, RegistryError

CAPABILITIES = ("ShareData", "ShareGradient", "ShareModel", "ReadGlobalModel")

# Which capability each joint-training mode requires from every group member.
MODE_CAPABILITY = {
    "data": "ShareData",
    "gradient": "ShareGradient",
    "model": "ShareModel",
}


@dataclass(frozen=True)
class PermissionGrant:
    source: str
    target: str
    capability: str
    granted_at: float

    def to_dict(self) -> dict:
        return {
            "source": self.source,
            "target": self.target,
            "capability": self.capability,
            "granted_at": self.granted_at,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "PermissionGrant":
        return cls(
            source=raw["source"],
            target=raw["target"],
            capability=raw["capability"],
            granted_at=float(raw["granted_at"]),
        )


@dataclass(frozen=True)
class Group:
    """Named set of collaborating apps; membership is fixed once a job starts."""

    identifier: str
    members: frozenset[str]

    def __post_init__(self):
        if not self.identifier:
            raise ConfigurationError("group identifier must be non-empty")
        object.__setattr__(self, "members", frozenset(self.members))


class PermissionRegistry:
    """Apps, groups, and the grants between them for one job."""

    def __init__(self):
        self._lock = threading.RLock()
        self._apps: set[str] = set()
        self._groups: dict[str, Group] = {}
        self._grants: dict[tuple[str, str, str], PermissionGrant] = {}

    def register_app(self, app_id: str) -> None:
        if not app_id:
            raise RegistryError("app id must be non-empty")
        with self._lock:
            self._apps.add(app_id)

    def register_group(self, group: Group) -> None:
        with self._lock:
            missing = [m for m in group.members if m not in self._apps]
            if missing:
                raise RegistryError(f"group members not registered: {sorted(missing)}")
            self._groups[group.identifier] = group

    def known_apps(self) -> set[str]:
        with self._lock:
            return set(self._apps)

    def group(self, group_id: str) -> Group | None:
        with self._lock:
            return self._groups.get(group_id)

    def _require_party(self, party: str) -> None:
        if party not in self._apps and party not in self._groups:
            raise RegistryError(f"unknown app or group: {party!r}")

    def grant(self, source: str, target: str, capability: str) -> PermissionGrant:
        """Record a directional grant; repeating one is a no-op returning the original."""
        if capability not in CAPABILITIES:
            raise ConfigurationError(f"unknown capability {capability!r}")
        with self._lock:
            self._require_party(source)
            self._require_party(target)
            key = (source, target, capability)
            if key not in self._grants:
                self._grants[key] = PermissionGrant(source, target, capability, time.time())
            return self._grants[key]

    def check(self, source: str, target: str, capability: str) -> bool:
        """True iff a matching unrevoked grant exists. Absence means denied."""
        with self._lock:
            return (source, target, capability) in self._grants

    def revoke(self, source: str, target: str, capability: str) -> None:
        with self._lock:
            self._grants.pop((source, target, capability), None)

    def grants(self) -> list[PermissionGrant]:
        with self._lock:
            return sorted(
                self._grants.values(), key=lambda g: (g.source, g.target, g.capability)
            )

    def missing_for_group_mode(self, group_id: str, mode: str) -> list[tuple[str, str, str]]:
        """Grants a joint job in `mode` still needs: every member -> group."""
        capability = MODE_CAPABILITY[mode]
        with self._lock:
            group = self._groups.get(group_id)
            if group is None:
                raise RegistryError(f"unknown group: {group_id!r}")
            return [
                (member, group_id, capability)
                for member in sorted(group.members)
                if (member, group_id, capability) not in self._grants
            ]

    def snapshot(self) -> "PermissionRegistry":
        """Independent copy, used to mirror job permissions onto devices."""
        with self._lock:
            clone = PermissionRegistry()
            clone._apps = set(self._apps)
            clone._groups = dict(self._groups)
            clone._grants = dict(self._grants)
            return clone

    def to_dict(self) -> dict:
        with self._lock:
            return {
                "apps": sorted(self._apps),
                "groups": {
                    gid: sorted(g.members) for gid, g in sorted(self._groups.items())
                },
                "grants": [g.to_dict() for g in self.grants()],
            }

    @classmethod
    def from_dict(cls, raw: dict) -> "PermissionRegistry":
        registry = cls()
        for app in raw.get("apps", []):
            registry.register_app(app)
        for gid, members in raw.get("groups", {}).items():
            registry.register_group(Group(identifier=gid, members=frozenset(members)))
        for item in raw.get("grants", []):
            grant = PermissionGrant.from_dict(item)
            registry._grants[(grant.source, grant.target, grant.capability)] = grant
        return registry
