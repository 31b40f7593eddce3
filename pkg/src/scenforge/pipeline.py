"""Scenario in, artifact tree out.

Artifact layout written by :func:`write_artifacts`::

    scenario.scn        canonical scenario text
    trajectories.json   one record per agent
    hdmap.json          class-tagged polylines
    t_b.ppm (+ .json)   trajectory raster and its sidecar
    h_b.ppm (+ .json)   map raster and its sidecar
    bundle/             condition bundle (see conditioner)
    render.svg          top-down debug figure
"""

from __future__ import annotations

import json
import os
import zlib
from dataclasses import dataclass, field

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

import numpy as np

from . import dsl, llm
from .bev import BevRaster, RasterParams, load_raster, rasterize_hdmap, rasterize_trajectories, save_raster
from .camera import CameraRig, default_rig
from .conditioner import SIZE_TABLE, TASKS, ConditionBundle, bundle, load_bundle, save_bundle
from .hdmap import HdMap, synthesize, validate
from .io import write_text
from .plotting import render_scene
from .post import lane_polylines
from .trajectory import KernelParams, Trajectory, dump_trajectories, generate_scene, load_trajectories

__all__ = ["GenResult", "PipelineConfig", "StageError", "check_artifacts", "load_config",
           "resolve_spec", "run", "write_artifacts"]

ARTIFACTS = ("scenario.scn", "trajectories.json", "hdmap.json", "t_b.ppm", "h_b.ppm", "bundle", "render.svg")


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass(frozen=True)
class PipelineConfig:
    kernel: KernelParams = field(default_factory=KernelParams)
    raster: RasterParams = field(default_factory=RasterParams)
    rig_path: str | None = None
    size_table_path: str | None = None
    task: str = "full_generation"
    out: str = "out"
    offline: bool = False
    seed: int | None = None
    start_index: int = 0
    lanes_per_side: int = 2

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task '{self.task}'")
        for p in (self.rig_path, self.size_table_path):
            if p is not None and not os.path.isfile(p):
                raise ValueError(f"file not found: {p}")

    def rig(self) -> CameraRig:
        return CameraRig.load(self.rig_path) if self.rig_path else default_rig()

    def size_table(self) -> dict:
        if not self.size_table_path:
            return dict(SIZE_TABLE)
        with open(self.size_table_path, encoding="utf-8") as fh:
            table = json.load(fh)
        for k, v in table.items():
            if len(v) != 3 or min(v) <= 0:
                raise ValueError(f"size table entry '{k}' must be three positive numbers")
        return {k: tuple(float(x) for x in v) for k, v in table.items()}


def load_config(path: str | None, **overrides) -> PipelineConfig:
    """TOML file (sections ``[kernel]``, ``[raster]``, ``[pipeline]``) plus overrides."""
    data: dict = {}
    if path:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    unknown = set(data) - {"kernel", "raster", "pipeline"}
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")
    kw = dict(data.get("pipeline", {}))
    if "kernel" in data:
        kw["kernel"] = KernelParams.from_dict(data["kernel"])
    if "raster" in data:
        r = dict(data["raster"])
        size = r.pop("size", None)
        if size is not None:
            r.setdefault("height", size)
            r.setdefault("width", size)
        kw["raster"] = RasterParams(**r)
    kw.update({k: v for k, v in overrides.items() if v is not None})
    return PipelineConfig(**kw)


def resolve_spec(prompt: str | None, scn_text: str | None, offline: bool) -> dsl.ScenarioSpec:
    if (prompt is None) == (scn_text is None):
        raise ValueError("give exactly one of a prompt or a scenario file")
    if scn_text is not None:
        try:
            return dsl.parse(scn_text)
        except dsl.DslError as e:
            raise StageError("parse", str(e)) from e
    if offline:
        return llm.match_intent(prompt)
    try:
        cfg = llm.config_from_env()
        text = llm.query_remote(cfg, llm.build_prompt(llm.DEFAULT_TEMPLATE, prompt))
    except (llm.GatewayError, ValueError) as e:
        raise StageError("gateway", f"{e} (use --offline for the built-in matcher)") from e
    try:
        return dsl.parse(text)
    except dsl.DslError as e:
        raise StageError("parse", f"completion does not parse: {e}") from e


@dataclass(eq=False)
class GenResult:
    spec: dsl.ScenarioSpec
    trajectories: list
    hdmap: HdMap
    t_b: BevRaster
    h_b: BevRaster
    bundle: ConditionBundle


def _map_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng([seed & 0xFFFFFFFF, seed >> 32, zlib.crc32(b"hdmap")])


def run(spec: dsl.ScenarioSpec, config: PipelineConfig = PipelineConfig()) -> GenResult:
    if config.seed is not None:
        spec = spec.with_seed(config.seed)
    stage = "trajectory"
    try:
        trajs = generate_scene(spec, config.kernel)
        stage = "hdmap"
        hd = synthesize(trajs, config.kernel.lane_width, config.lanes_per_side, _map_rng(spec.seed))
        problems = validate(hd, trajs)
        if problems:
            raise ValueError("; ".join(v.message for v in problems[:3]))
        stage = "raster"
        t_b = rasterize_trajectories(trajs, config.raster)
        h_b = rasterize_hdmap(hd, config.raster)
        stage = "post"
        lanes = lane_polylines(h_b)
        stage = "bundle"
        b = bundle(spec, trajs, lanes, config.rig(), config.task, config.start_index,
                   size_table=config.size_table())
    except StageError:
        raise
    except Exception as e:  # noqa: BLE001 - reported with the stage name
        raise StageError(stage, str(e)) from e
    b.meta["warnings"] = list(spec.warnings) + list(t_b.warnings)
    return GenResult(spec, trajs, hd, t_b, h_b, b)


def write_artifacts(res: GenResult, out: str) -> dict[str, str]:
    os.makedirs(out, exist_ok=True)
    paths = {name: os.path.join(out, name) for name in ARTIFACTS}
    write_text(paths["scenario.scn"], dsl.print_canonical(res.spec))
    write_text(paths["trajectories.json"], dump_trajectories(res.trajectories))
    write_text(paths["hdmap.json"], res.hdmap.dumps())
    save_raster(res.t_b, paths["t_b.ppm"])
    save_raster(res.h_b, paths["h_b.ppm"])
    save_bundle(res.bundle, paths["bundle"])
    render_scene(res.trajectories, res.hdmap, paths["render.svg"])
    return paths


def check_artifacts(out: str) -> list[str]:
    """Reload every artifact and re-run its checks; returns problems found."""
    problems: list[str] = []

    def read(name):
        with open(os.path.join(out, name), encoding="utf-8") as fh:
            return fh.read()

    for name in ARTIFACTS:
        if not os.path.exists(os.path.join(out, name)):
            problems.append(f"missing {name}")
    if problems:
        return problems
    try:
        spec = dsl.parse(read("scenario.scn"))
        if dsl.print_canonical(spec) != read("scenario.scn"):
            problems.append("scenario.scn is not canonical")
    except dsl.DslError as e:
        problems.append(f"scenario.scn: {e}")
    trajs: list[Trajectory] = []
    try:
        trajs = load_trajectories(read("trajectories.json"))
    except (ValueError, KeyError) as e:
        problems.append(f"trajectories.json: {e}")
    try:
        hd = HdMap.from_json(json.loads(read("hdmap.json")))
        if trajs:
            problems += [f"hdmap: {v.message}" for v in validate(hd, trajs)]
    except (ValueError, KeyError) as e:
        problems.append(f"hdmap.json: {e}")
    for name in ("t_b.ppm", "h_b.ppm"):
        try:
            load_raster(os.path.join(out, name))
        except (ValueError, OSError) as e:
            problems.append(f"{name}: {e}")
    try:
        b = load_bundle(os.path.join(out, "bundle"))
        if trajs and b.meta["agents"] != [t.agent_id for t in trajs]:
            problems.append("bundle agents do not match trajectories.json")
    except (ValueError, KeyError, OSError) as e:
        problems.append(f"bundle: {e}")
    return problems

