"""Seeded synthetic fab histories with known per-step ground truth.

Every token belongs to an equipment family, and all tokens of a family share
one effect size, except the planted culprit tokens.  A wafer's label is

    y = base + sum_k beta(token_k) * g(psi_k) + lot_effect + noise,   clipped at 0,

where psi_k = log10(1 + wait hours before step k) and g is the identity
(``response="log"``) or a square (``response="quadratic"``, deliberately
outside the linear model class).  The first step's wait counts as zero.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .ingest import DEFAULT_SCHEMA, ProcessStep, Trajectory, build_token, write_history, write_labels
from .route2vec import psi

FAMILIES = ("WET", "RTP", "INSP", "LITH", "RIE", "IMP", "FURN", "CMP")
EPOCH0 = 1735689600  # 2025-01-01T00:00:00Z


@dataclass(frozen=True)
class SynthConfig:
    n_wafers: int = 800
    route_length: tuple[int, int] = (20, 60)
    n_eqp_families: int = 8
    tools_per_family: int = 3
    recipes_per_family: int = 6
    n_routes: int = 3
    mean_wait_hours: float = 2.0
    family_effect_range: tuple[float, float] = (-0.3, 0.3)
    recipe_split_prob: float = 0.4
    recipe_effect_sd: float = 0.1
    tool_effect_sd: float = 0.05
    culprit_effects: tuple[float, ...] = (1.0,)
    culprit_wait_hours: float = 48.0
    culprit_fraction: float = 0.1
    rework_prob: float = 0.03
    base_density: float = 0.5
    noise_sd: float = 0.1
    lot_size: int = 25
    lot_effect_sd: float = 0.05
    response: str = "log"
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.route_length
        counts = (self.n_wafers, self.n_eqp_families, self.tools_per_family, self.recipes_per_family,
                  self.n_routes, self.lot_size, lo)
        if min(counts) < 1 or hi < lo:
            raise ValueError("synthetic config counts must be >= 1 and route_length ordered")
        if self.n_eqp_families > len(FAMILIES):
            raise ValueError(f"at most {len(FAMILIES)} equipment families")
        if min(self.noise_sd, self.lot_effect_sd, self.mean_wait_hours, self.culprit_wait_hours,
               self.recipe_effect_sd, self.tool_effect_sd) < 0:
            raise ValueError("standard deviations and waits must be >= 0")
        probs = (self.culprit_fraction, self.rework_prob, self.recipe_split_prob)
        if not all(0 <= p <= 1 for p in probs) or self.rework_prob == 1:
            raise ValueError("probabilities must lie in [0, 1]")
        if self.response not in ("log", "quadratic"):
            raise ValueError("response must be 'log' or 'quadratic'")


@dataclass
class GroundTruth:
    token_effects: dict[str, float]
    culprit_tokens: list[str]
    base_density: float
    lot_effects: dict[str, float]
    wafers: dict[str, dict] = field(default_factory=dict)  # wafer -> lot, noise, contributions, affected

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=1, sort_keys=True) + "\n")

    @classmethod
    def from_json(cls, path) -> "GroundTruth":
        return cls(**json.loads(Path(path).read_text()))


@dataclass
class SynthData:
    trajectories: list[Trajectory]
    labels: dict[str, float]
    lots: dict[str, str]
    truth: GroundTruth
    config: SynthConfig


def _route_templates(cfg: SynthConfig, rng: np.random.Generator):
    fams = FAMILIES[: cfg.n_eqp_families]
    routes = []
    for r in range(cfg.n_routes):
        length = int(rng.integers(cfg.route_length[0], cfg.route_length[1] + 1))
        n_layers = 4
        steps = []
        for pos in range(length):
            fam = fams[int(rng.integers(len(fams)))]
            steps.append({
                "family": fam,
                "recipe": f"{fam}_R{int(rng.integers(cfg.recipes_per_family)) + 1:02d}",
                "photo_layer": f"PL{1 + pos * n_layers // length}",
                "route": f"RT{chr(ord('A') + r)}",
            })
        routes.append(steps)
    return routes


def _step_attrs(template: dict, tool: int, recipe: str | None = None) -> dict[str, str]:
    fam = template["family"]
    return {
        "eqp": f"{fam}{tool + 1:02d}",
        "recipe": recipe or template["recipe"],
        "tool_type": fam,
        "photo_layer": template["photo_layer"],
        "route": template["route"],
    }


def generate_fab(cfg: SynthConfig = SynthConfig(), out_dir=None) -> SynthData:
    """Generate a labelled fab with its ground truth; optionally write it to ``out_dir``."""
    rng = np.random.default_rng(cfg.seed)
    routes = _route_templates(cfg, rng)
    fams = FAMILIES[: cfg.n_eqp_families]
    lo, hi = cfg.family_effect_range
    raw = rng.uniform(lo, hi, size=len(fams))
    family_beta = {f: float(b) for f, b in zip(fams, raw - raw.mean() + (lo + hi) / 2)}
    # token effect = family part + small recipe/tool offsets, so similar tokens act alike
    recipe_beta = {f"{f}_R{j + 1:02d}": float(rng.normal(0.0, cfg.recipe_effect_sd))
                   for f in fams for j in range(cfg.recipes_per_family)}
    tool_beta = {f"{f}{j + 1:02d}": float(rng.normal(0.0, cfg.tool_effect_sd))
                 for f in fams for j in range(cfg.tools_per_family)}

    # culprits sit mid-route on route A so later steps exist to dilute them
    culprit_specs = []
    route0 = routes[0]
    for effect in cfg.culprit_effects:
        pos = int(rng.integers(len(route0) // 4, max(len(route0) // 4 + 1, 3 * len(route0) // 4)))
        tool = int(rng.integers(cfg.tools_per_family))
        culprit_specs.append((pos, tool, float(effect)))
    culprit_tokens = [build_token(ProcessStep("", 1, 0, _step_attrs(route0[p], t)), DEFAULT_SCHEMA)
                      for p, t, _ in culprit_specs]
    culprit_beta = dict(zip(culprit_tokens, (e for _, _, e in culprit_specs)))

    n_lots = -(-cfg.n_wafers // cfg.lot_size)
    lot_ids = [f"LOT{i + 1:03d}" for i in range(n_lots)]
    lot_route = {lot: int(rng.integers(cfg.n_routes)) for lot in lot_ids}
    lot_effect = {lot: float(rng.normal(0.0, cfg.lot_effect_sd)) if cfg.lot_effect_sd > 0 else 0.0
                  for lot in lot_ids}

    trajectories, labels, lots = [], {}, {}
    truth = GroundTruth({}, culprit_tokens, cfg.base_density, lot_effect)
    for n in range(cfg.n_wafers):
        wid = f"W{n + 1:04d}"
        lot = lot_ids[n // cfg.lot_size]
        affected = bool(culprit_specs) and rng.random() < cfg.culprit_fraction
        r = 0 if affected else lot_route[lot]
        template = routes[r]
        t = EPOCH0 + (n // cfg.lot_size) * 6 * 3600 + int(rng.integers(0, 3600))
        steps, contrib = [], []
        for pos, tmpl in enumerate(template):
            tool = int(rng.integers(cfg.tools_per_family))
            recipe = None
            if rng.random() < cfg.recipe_split_prob:
                recipe = f"{tmpl['family']}_R{int(rng.integers(cfg.recipes_per_family)) + 1:02d}"
            planted = None
            if affected and r == 0:
                for cpos, ctool, _ in culprit_specs:
                    if cpos == pos:
                        tool, recipe, planted = ctool, None, cfg.culprit_wait_hours
            repeats = 2 if tmpl["family"] == "LITH" and rng.random() < cfg.rework_prob else 1
            for rep in range(repeats):
                if planted is not None and rep == 0:
                    wait = planted
                else:
                    wait = rng.exponential(cfg.mean_wait_hours)
                if steps:
                    t += int(round(wait * 3600))
                attrs = _step_attrs(tmpl, tool, recipe)
                tok = build_token(ProcessStep(wid, 1, t, attrs), DEFAULT_SCHEMA)
                beta = culprit_beta.get(tok, family_beta[tmpl["family"]] + recipe_beta[attrs["recipe"]]
                                        + tool_beta[attrs["eqp"]])
                truth.token_effects[tok] = beta
                w = psi((t - steps[-1].timestamp) / 3600.0) if steps else 0.0
                contrib.append(beta * (w if cfg.response == "log" else w * w))
                steps.append(ProcessStep(wid, len(steps) + 1, t, attrs))
        noise = float(rng.normal(0.0, cfg.noise_sd)) if cfg.noise_sd > 0 else 0.0
        y = max(0.0, cfg.base_density + float(np.sum(contrib)) + lot_effect[lot] + noise)
        trajectories.append(Trajectory(wid, steps))
        labels[wid] = y
        lots[wid] = lot
        truth.wafers[wid] = {"lot": lot, "noise": noise, "contributions": contrib, "affected": affected}

    truth.token_effects = dict(sorted(truth.token_effects.items()))
    data = SynthData(trajectories, labels, lots, truth, cfg)
    if out_dir is not None:
        write_fab(data, out_dir)
    return data


def write_fab(data: SynthData, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"history": out / "history.csv", "labels": out / "labels.csv", "truth": out / "ground_truth.json"}
    write_history(data.trajectories, paths["history"], list(DEFAULT_SCHEMA))
    write_labels(paths["labels"], data.labels, data.lots)
    data.truth.to_json(paths["truth"])
    return paths


def oracle_effect(truth: GroundTruth, wafer_id: str) -> list[float]:
    """True per-step contributions c_k of one wafer."""
    try:
        return list(truth.wafers[wafer_id]["contributions"])
    except KeyError:
        raise KeyError(f"unknown wafer {wafer_id!r}") from None
