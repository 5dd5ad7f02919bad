"""Deterministic synthetic corpora for demos, tests and offline runs.

Each synthetic model owns a visual theme; its demonstration prompts draw
from theme-specific word pools so routing is learnable from text alone.
Everything is a pure function of the seed.
"""

from __future__ import annotations

import hashlib
import random
from typing import Sequence

from .argschema import ArgumentSchema, default_schema
from .benchbuild import GenerationJob, RoleCard
from .datastore import BenchmarkSample, ChatInput, Demonstration, Turn

THEMES = (
    ("portrait", "PhotoReal Portraits", ("portrait of a", "close-up of a", "studio shot of a"),
     ("old fisherman", "ballet dancer", "street musician", "chess master", "beekeeper",
      "violin maker", "lighthouse keeper", "tea farmer")),
    ("anime", "AnimeWave XL", ("anime illustration of a", "manga panel of a", "cel-shaded"),
     ("sky pirate", "shrine fox", "mecha pilot", "ramen chef", "star witch",
      "cyber samurai", "ghost librarian", "cloud whale")),
    ("landscape", "TerraVista", ("wide shot of", "aerial view of", "panorama of"),
     ("misty fjords", "terraced rice fields", "a desert canyon", "a frozen waterfall",
      "rolling lavender hills", "a volcanic coastline", "an ancient redwood forest",
      "salt flats at dawn")),
    ("scifi", "NebulaForge", ("concept art of", "matte painting of", "render of"),
     ("an orbital shipyard", "a neon megacity", "a derelict star cruiser",
      "a terraforming rig", "a cryo vault", "an asteroid mining colony",
      "a quantum lighthouse", "a dyson ring")),
    ("food", "DeliDiffusion", ("food photography of", "overhead shot of", "macro shot of"),
     ("a berry tart", "steaming ramen", "sourdough loaves", "a sushi platter",
      "melting chocolate cake", "a farmers market haul", "fresh pasta", "spiced chai")),
    ("architecture", "ArchiRender Pro", ("architectural photo of", "blueprint render of",
      "isometric view of"),
     ("a brutalist library", "a bamboo pavilion", "a cliffside monastery",
      "a floating opera house", "an art deco station", "a glass greenhouse",
      "a medieval bridge", "a subterranean atrium")),
    ("fantasy", "MythicBrush", ("oil painting of a", "storybook scene of a", "epic scene of a"),
     ("dragon over a harbor", "witch's herb shop", "dwarven forge", "fae wedding",
      "sunken cathedral", "griffin rider", "moonlit standing stones", "wandering golem")),
    ("abstract", "FluxField", ("abstract composition of", "generative pattern of",
      "fluid painting of"),
     ("interlocking waves", "fractal bloom", "magnetic fields", "shattered glass light",
      "ink in water", "aurora ribbons", "woven gradients", "particle storms")),
    ("wildlife", "FaunaFocus", ("wildlife photo of a", "telephoto shot of a",
      "golden hour shot of a"),
     ("snow leopard", "hummingbird in flight", "breaching whale", "red panda",
      "desert fox", "great grey owl", "sea turtle hatchling", "alpine ibex")),
    ("retro", "Nostalgia86", ("vhs still of", "polaroid of", "risograph print of"),
     ("a roadside diner", "an arcade at night", "a drive-in theater", "a record shop",
      "a tube television", "a roller rink", "a motel pool", "a cassette collection")),
)

_STYLES = ("dramatic lighting", "soft focus", "high detail", "muted palette",
           "vivid colors", "film grain", "volumetric light", "sharp contrast")
_NEGATIVES = ("", "blurry, low quality", "text, watermark", "overexposed")


def _theme(index: int) -> tuple[str, str, tuple[str, ...], tuple[str, ...]]:
    base = THEMES[index % len(THEMES)]
    if index < len(THEMES):
        return base
    return (f"{base[0]}{index // len(THEMES) + 1}",
            f"{base[1]} {index // len(THEMES) + 1}", base[2], base[3])


def model_id_for(index: int) -> str:
    return f"sd-{_theme(index)[0]}"


def make_demos(
    num_models: int = 5,
    per_model: int = 20,
    seed: int = 0,
    schema: ArgumentSchema | None = None,
) -> tuple[list[Demonstration], dict[str, str]]:
    """Synthesize themed demonstrations plus model display names."""
    schema = schema or default_schema()
    rng = random.Random(seed)
    sampler_choices = ("euler a", "dpm++ 2m karras", "ddim", "unipc")
    demos: list[Demonstration] = []
    display: dict[str, str] = {}
    for mi in range(num_models):
        slug, name, openers, subjects = _theme(mi)
        model_id = f"sd-{slug}"
        display[model_id] = name
        for di in range(per_model):
            opener = openers[di % len(openers)]
            subject = subjects[(di + rng.randrange(len(subjects))) % len(subjects)]
            styles = rng.sample(_STYLES, k=2)
            prompt = f"{opener} {subject}, {styles[0]}, {styles[1]}"
            args = schema.validate({
                "sampler": sampler_choices[rng.randrange(len(sampler_choices))],
                "steps": rng.choice((20, 25, 30, 40)),
                "cfg_scale": rng.choice((5.0, 7.0, 7.5, 9.0)),
                "width": rng.choice((512, 640, 768)),
                "height": rng.choice((512, 640, 768)),
                "seed": -1,
                "negative_prompt": rng.choice(_NEGATIVES),
                "clip_skip": rng.choice((1, 1, 2)),
            })
            demo_id = f"{model_id}-d{di:03d}"
            image_digest = None
            if di % 4 == 0:
                image_digest = hashlib.sha256(f"img-{demo_id}".encode()).hexdigest()
            demos.append(Demonstration(
                demo_id=demo_id,
                model_id=model_id,
                prompt=prompt,
                args=args,
                source_quality={"likes": rng.randrange(0, 500),
                                "downloads": rng.randrange(0, 2000)},
                image_digest=image_digest,
            ))
    return demos, display


def make_jobs(
    demos: Sequence[Demonstration],
    roles: Sequence[RoleCard],
    n_jobs: int,
    seed: int = 0,
    backend_id: str = "mock-roleplay",
) -> list[GenerationJob]:
    """Cycle demos x roles into generation jobs with a mixed kind split
    (roughly 60% single / 20% multimodal / 20% history)."""
    rng = random.Random(seed)
    jobs: list[GenerationJob] = []
    for i in range(n_jobs):
        demo = demos[i % len(demos)]
        role = roles[rng.randrange(len(roles))]
        draw = rng.random()
        if draw < 0.2 and demo.image_digest:
            kind = "multimodal"
        elif draw < 0.4:
            kind = "history"
        else:
            kind = "single"
        jobs.append(GenerationJob(demo_id=demo.demo_id, role_id=role.role_id,
                                  kind=kind, backend_id=backend_id))
    return jobs


_ASKS = (
    "hey, could you make {p} for me?",
    "hi! i want a picture: {p}",
    "can you draw {p}? thanks a lot",
    "i'd love an image of {p}",
    "please make me something like {p}",
)


def make_benchmark(
    demos: Sequence[Demonstration],
    n_samples: int,
    seed: int = 0,
    split: str = "test",
) -> list[BenchmarkSample]:
    """Directly constructed benchmark samples (no generation step): each
    sample's input casually asks for its demo's prompt."""
    rng = random.Random(seed)
    samples: list[BenchmarkSample] = []
    for i in range(n_samples):
        demo = demos[i % len(demos)]
        head = demo.prompt.split(",")[0].strip()
        ask = _ASKS[rng.randrange(len(_ASKS))].format(p=head)
        if i % 10 == 3:
            chat = ChatInput(kind="history", turns=(
                Turn("user", "hi, i need an image for a small project"),
                Turn("assistant", "sure - what should it show?"),
                Turn("user", ask),
            ))
        else:
            chat = ChatInput.single(ask)
        samples.append(BenchmarkSample(
            sample_id=f"bench-{i:05d}",
            input=chat,
            gt_prompt=demo.prompt,
            gt_model_id=demo.model_id,
            gt_args=dict(demo.args),
            split=split,
        ))
    return samples
