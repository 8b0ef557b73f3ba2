"""Template captions and paraphrase-style augmentation.

Stands in for an image captioner plus an LLM rewriter: the subject slot is
derived from scene parameters, everything else is drawn from small word lists
by a seeded RNG.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field

import numpy as np

from .render.scene import SubjectScene

BASE_TEMPLATES = (
    "a {adjective} {person} in front of a {background}",
    "portrait of a {adjective} {person} standing before a {background}",
    "a close-up of a {adjective} {person} with a {background} behind",
    "a {adjective} {person} posing in front of a {background}",
)
AUGMENT_TEMPLATES = (
    "a {adjective} {person} in {context}",
    "a {adjective} {person} photographed in {context}",
    "cinematic shot of a {adjective} {person} in {context}",
    "a {adjective} {person} looking at the camera in {context}",
)

ADJECTIVES = ("calm", "smiling", "serious", "young", "thoughtful", "relaxed", "focused", "cheerful")
SURFACES = ("wall", "backdrop", "curtain", "studio wall")
CONTEXTS = (
    "a busy city street", "a quiet forest clearing", "a cozy living room", "a beach at sunset",
    "a snowy mountain village", "a neon-lit alley", "a sunlit library", "a crowded cafe",
    "an empty parking garage", "a rooftop garden", "a desert highway", "a rainy train station",
)
_COLOR_NAMES = {
    "red": (0.6, 0.15, 0.15), "orange": (0.6, 0.35, 0.1), "yellow": (0.55, 0.55, 0.1),
    "green": (0.15, 0.55, 0.2), "teal": (0.1, 0.5, 0.5), "blue": (0.15, 0.2, 0.6),
    "purple": (0.4, 0.15, 0.55), "pink": (0.6, 0.2, 0.45), "gray": (0.35, 0.35, 0.35),
}
_TONES = ("fair-skinned", "light-skinned", "tan", "olive-skinned", "brown-skinned", "dark-skinned")


class CaptionError(ValueError):
    pass


@dataclass(frozen=True)
class Caption:
    text: str
    template_id: int
    slots: dict = field(default_factory=dict, hash=False)


class CaptionBank:
    def __init__(self, base=BASE_TEMPLATES, augment=AUGMENT_TEMPLATES):
        if not base:
            raise CaptionError("caption template bank is empty")
        self.templates = tuple(base) + tuple(augment)
        self.n_base = len(base)
        for t in self.templates:
            fields = {f for _, f, _, _ in string.Formatter().parse(t) if f}
            if "person" not in fields:
                raise CaptionError(f"template {t!r} has no {{person}} slot")

    def render(self, template_id: int, slots: dict) -> Caption:
        return Caption(self.templates[template_id].format(**slots), template_id, dict(slots))

    def caption(self, scene: SubjectScene, rng_seed: int) -> Caption:
        rng = np.random.default_rng([rng_seed, scene.subject_id, 0xCA9])
        slots = {
            "adjective": ADJECTIVES[rng.integers(len(ADJECTIVES))],
            "person": person_descriptor(scene),
            "background": f"{color_name(scene.background_albedo)} {SURFACES[rng.integers(len(SURFACES))]}",
        }
        return self.render(int(rng.integers(self.n_base)), slots)

    def augment(self, caption: Caption, n_variants: int, rng_seed: int) -> list[Caption]:
        if n_variants < 1:
            raise CaptionError("n_variants must be >= 1")
        if len(self.templates) == self.n_base:
            raise CaptionError("bank has no augmentation templates")
        rng = np.random.default_rng([rng_seed, 0xA06])
        out = []
        for _ in range(n_variants):
            slots = {
                "adjective": ADJECTIVES[rng.integers(len(ADJECTIVES))],
                "person": caption.slots["person"],
                "context": CONTEXTS[rng.integers(len(CONTEXTS))],
            }
            tid = self.n_base + int(rng.integers(len(self.templates) - self.n_base))
            out.append(self.render(tid, slots))
        return out


def person_descriptor(scene: SubjectScene) -> str:
    ax = scene.head.axes
    ratio = ax[2] / ax[0]
    shape = "round-faced" if ratio < 1.25 else ("oval-faced" if ratio < 1.45 else "long-faced")
    lum = float(np.dot(scene.albedo_skin, (0.2126, 0.7152, 0.0722)))
    tone = _TONES[min(int((0.85 - lum) / 0.1), len(_TONES) - 1)] if lum < 0.85 else _TONES[0]
    return f"{tone} {shape} person"


def color_name(rgb) -> str:
    rgb = np.asarray(rgb, float)
    return min(_COLOR_NAMES, key=lambda k: float(np.sum((np.asarray(_COLOR_NAMES[k]) - rgb) ** 2)))


_DEFAULT_BANK = CaptionBank()


def generate_caption(scene: SubjectScene, rng_seed: int, bank: CaptionBank | None = None) -> Caption:
    return (bank or _DEFAULT_BANK).caption(scene, rng_seed)


def augment_caption(caption: Caption, n_variants: int, rng_seed: int,
                    bank: CaptionBank | None = None) -> list[Caption]:
    return (bank or _DEFAULT_BANK).augment(caption, n_variants, rng_seed)
