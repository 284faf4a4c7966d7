"""Per-section reference memory: build, cache, and compose ref bundles.

Every panel in a story section conditions on the same scene, character,
and object references. Building them is expensive (one profile and one
image per missing name), so memories are cached under a digest of their
inputs and reloaded wholesale on a hit.
"""

from __future__ import annotations

import hashlib
import json
import logging
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .errors import GatewayError, ValidationError
from .planning import PanelSpec, SectionSpec

log = logging.getLogger(__name__)

MAX_REFS = 6


@dataclass(frozen=True)
class RefAsset:
    """One reusable reference: a text description plus an optional image."""

    name: str
    text_desc: str
    image_path: Optional[str] = None
    origin: str = "generated"

    def __post_init__(self):
        if not self.text_desc.strip():
            raise ValidationError(f"ref asset {self.name!r} has no description")
        if self.origin not in ("user", "generated"):
            raise ValidationError(f"bad ref origin {self.origin!r}")

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.name.encode())
        h.update(b"\0")
        h.update(self.text_desc.encode())
        if self.image_path:
            h.update(b"\0")
            h.update(Path(self.image_path).read_bytes())
        return h.hexdigest()

    def to_dict(self, base: Optional[Path] = None) -> dict:
        image = self.image_path
        if image and base:
            image = str(Path(image).relative_to(base))
        return {"name": self.name, "text_desc": self.text_desc,
                "image_file": image, "origin": self.origin,
                "digest": self.digest()}


@dataclass(frozen=True)
class UserRefs:
    """Name-addressed assets supplied by the user before generation."""

    assets: tuple[RefAsset, ...] = ()

    def __post_init__(self):
        names = [a.name.lower() for a in self.assets]
        if len(set(names)) != len(names):
            raise ValidationError(f"duplicate user ref names: {names}")

    def get(self, name: str) -> Optional[RefAsset]:
        low = name.lower()
        for a in self.assets:
            if a.name.lower() == low:
                return a
        return None


@dataclass
class SectionMemory:
    section_id: str
    description: str
    scene_ref: RefAsset
    char_refs: dict[str, RefAsset] = field(default_factory=dict)
    obj_refs: dict[str, RefAsset] = field(default_factory=dict)
    profiles: dict[str, str] = field(default_factory=dict)
    warnings: tuple[str, ...] = ()


_PROFILE_SYSTEM = (
    "You are a manga art director keeping a model sheet bible. Write a "
    "compact visual profile (one paragraph, concrete and drawable) for the "
    "requested subject. No story events, only stable appearance traits."
)


def _seed_for(section_id: str, name: str) -> int:
    h = hashlib.sha256(f"{section_id}|{name}".encode()).digest()
    return int.from_bytes(h[:4], "big") % (2 ** 31)


def _safe_name(name: str) -> str:
    return "".join(c if c.isalnum() else "_" for c in name)[:40] or "ref"


def _generate_asset(kind: str, name: str, context: str, section: SectionSpec,
                    style: str, gateway, out_dir: Path,
                    warnings: list[str]) -> tuple[RefAsset, str]:
    """Profile via chat, reference image via the image model.

    An image failure degrades to a text-only asset; a chat failure is
    fatal because the profile feeds every panel prompt of the section.
    """
    if gateway is None:
        raise ValidationError(
            f"no user reference covers {kind} {name!r} and no gateway is "
            f"configured to generate one")
    ask = {
        "scene": f"Setting: {context}. Describe the location as an "
                 f"establishing shot background.",
        "character": f"Character: {name}. Appears in: {context}. Describe "
                     f"face, hair, build, outfit.",
        "object": f"Key object: {name}. Appears in: {context}. Describe "
                  f"shape, size, material, distinguishing marks.",
    }[kind]
    profile = gateway.chat(
        [{"role": "system", "content": _PROFILE_SYSTEM},
         {"role": "user", "content": f"Art style: {style}\n{ask}"}],
        temperature=0.3, seed=_seed_for(section.section_id, name))

    prompt = {
        "scene": f"{style}, establishing shot, no characters, {profile}",
        "character": f"{style}, character reference sheet, full body, "
                     f"neutral background, {profile}",
        "object": f"{style}, object design sheet, plain background, {profile}",
    }[kind]
    image_path = None
    try:
        png = gateway.image(prompt, 768, 768,
                            seed=_seed_for(section.section_id, name))
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / f"{kind}_{_safe_name(name)}.png"
        path.write_bytes(png)
        image_path = str(path)
    except GatewayError as exc:
        warnings.append(f"image generation failed for {kind} {name!r}: {exc}")
        log.warning("image ref for %s %r degraded to text-only: %s",
                    kind, name, exc)
    return RefAsset(name=name, text_desc=profile, image_path=image_path,
                    origin="generated"), profile


def build_section_memory(section: SectionSpec, user_refs: UserRefs,
                         style: str, gateway,
                         cache_dir: Optional[str] = None) -> SectionMemory:
    """Assemble the reference bundle for one section.

    User-supplied assets win by name; everything else is generated and
    written under ``cache_dir``.
    """
    out_dir = Path(cache_dir) if cache_dir else Path(".")
    warnings: list[str] = []
    profiles: dict[str, str] = {}

    scene_name = section.scene or section.section_id
    scene_ref = user_refs.get(scene_name)
    if scene_ref is None:
        scene_ref, _ = _generate_asset("scene", scene_name,
                                       section.scene or section.description,
                                       section, style, gateway, out_dir,
                                       warnings)

    char_refs: dict[str, RefAsset] = {}
    for name in section.characters:
        asset = user_refs.get(name)
        if asset is not None:
            char_refs[name] = asset
            profiles[name] = asset.text_desc
        else:
            asset, profile = _generate_asset("character", name,
                                             section.description, section,
                                             style, gateway, out_dir, warnings)
            char_refs[name] = asset
            profiles[name] = profile

    obj_refs: dict[str, RefAsset] = {}
    for name in section.key_objects:
        asset = user_refs.get(name)
        if asset is not None:
            obj_refs[name] = asset
            profiles[name] = asset.text_desc
        else:
            asset, profile = _generate_asset("object", name,
                                             section.description, section,
                                             style, gateway, out_dir, warnings)
            obj_refs[name] = asset
            profiles[name] = profile

    return SectionMemory(section_id=section.section_id,
                         description=section.description,
                         scene_ref=scene_ref, char_refs=char_refs,
                         obj_refs=obj_refs, profiles=profiles,
                         warnings=tuple(warnings))


# ---------------------------------------------------------------------------
# Cache
# ---------------------------------------------------------------------------


def memory_cache_key(section: SectionSpec, user_refs: UserRefs,
                     style: str) -> str:
    doc = {
        "section": section.to_dict(),
        "style": style,
        "user_refs": {a.name: a.digest() for a in user_refs.assets},
    }
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _persist(memory: SectionMemory, entry_dir: Path) -> None:
    entry_dir.mkdir(parents=True, exist_ok=True)

    def ref_doc(asset: RefAsset) -> dict:
        doc = {"name": asset.name, "text_desc": asset.text_desc,
               "origin": asset.origin, "digest": asset.digest(),
               "image_file": None}
        if asset.image_path:
            src = Path(asset.image_path)
            if src.parent == entry_dir:
                doc["image_file"] = src.name
            else:
                # imported files get a namespaced copy to dodge collisions
                name = f"{asset.origin}_{_safe_name(asset.name)}{src.suffix}"
                shutil.copyfile(src, entry_dir / name)
                doc["image_file"] = name
        return doc

    manifest = {
        "schema_version": 1,
        "section_id": memory.section_id,
        "description": memory.description,
        "scene_ref": ref_doc(memory.scene_ref),
        "char_refs": {n: ref_doc(a) for n, a in memory.char_refs.items()},
        "obj_refs": {n: ref_doc(a) for n, a in memory.obj_refs.items()},
        "profiles": memory.profiles,
        "warnings": list(memory.warnings),
    }
    tmp = entry_dir / "manifest.tmp"
    tmp.write_text(json.dumps(manifest, indent=2, ensure_ascii=False))
    tmp.rename(entry_dir / "manifest.json")


def _load(entry_dir: Path, section: SectionSpec) -> SectionMemory:
    manifest = json.loads((entry_dir / "manifest.json").read_text())

    def ref(doc: dict) -> RefAsset:
        image_path = None
        if doc.get("image_file"):
            p = entry_dir / doc["image_file"]
            if not p.exists():
                raise ValidationError(f"missing cached image {p}")
            image_path = str(p)
        asset = RefAsset(name=doc["name"], text_desc=doc["text_desc"],
                         image_path=image_path, origin=doc["origin"])
        if asset.digest() != doc["digest"]:
            raise ValidationError(f"cache digest mismatch for {doc['name']!r}")
        return asset

    memory = SectionMemory(
        section_id=manifest["section_id"],
        description=manifest["description"],
        scene_ref=ref(manifest["scene_ref"]),
        char_refs={n: ref(d) for n, d in manifest["char_refs"].items()},
        obj_refs={n: ref(d) for n, d in manifest["obj_refs"].items()},
        profiles=dict(manifest["profiles"]),
        warnings=tuple(manifest.get("warnings", ())),
    )
    for name in section.characters:
        if name not in memory.char_refs:
            raise ValidationError(f"cached memory misses character {name!r}")
    for name in section.key_objects:
        if name not in memory.obj_refs:
            raise ValidationError(f"cached memory misses object {name!r}")
    return memory


def load_or_build(section: SectionSpec, user_refs: UserRefs, style: str,
                  cache_dir: str, gateway) -> SectionMemory:
    """Digest-keyed cache around ``build_section_memory``.

    A corrupt entry (bad JSON, missing file, digest mismatch, coverage
    hole) is discarded and rebuilt in place.
    """
    key = memory_cache_key(section, user_refs, style)
    entry_dir = Path(cache_dir) / "sections" / key
    if (entry_dir / "manifest.json").exists():
        try:
            return _load(entry_dir, section)
        except (ValidationError, KeyError, json.JSONDecodeError, OSError) as exc:
            log.warning("section cache %s corrupt (%s); rebuilding", key, exc)
            shutil.rmtree(entry_dir, ignore_errors=True)
    memory = build_section_memory(section, user_refs, style, gateway,
                                  cache_dir=str(entry_dir))
    _persist(memory, entry_dir)
    return _load(entry_dir, section)


# ---------------------------------------------------------------------------
# Bundles
# ---------------------------------------------------------------------------


def mentioned_names(memory: SectionMemory, panel: PanelSpec) -> list[str]:
    """Characters then objects, in section order, that the panel mentions.

    Characters count when named in the description (case-insensitive
    substring) or speaking a line; objects when named in the description
    or any dialogue text. Aliases are not resolved.
    """
    desc = panel.description.lower()
    speakers = {d.speaker.lower() for d in panel.dialogue if d.speaker}
    spoken = " ".join(d.text for d in panel.dialogue).lower()

    names = []
    for name in memory.char_refs:
        if name.lower() in desc or name.lower() in speakers:
            names.append(name)
    for name in memory.obj_refs:
        low = name.lower()
        if low in desc or low in spoken:
            names.append(name)
    return names


def compose_ref(memory: SectionMemory, panel: PanelSpec,
                user_refs: UserRefs = UserRefs(),
                max_refs: int = MAX_REFS) -> list[RefAsset]:
    """Ordered conditioning bundle: scene first, then mentioned refs.

    User refs override same-named memory assets; the bundle never exceeds
    ``max_refs`` (scene plus the earliest mentions survive the cap).
    """
    bundle = [memory.scene_ref]
    lookup = {**memory.char_refs, **memory.obj_refs}
    for name in mentioned_names(memory, panel):
        asset = user_refs.get(name) or lookup[name]
        bundle.append(asset)
    return bundle[:max_refs]
