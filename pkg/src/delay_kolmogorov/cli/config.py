"""
実行設定（JSON/YAML）の読み込みとスキーマ

未知のキーはすべての階層で拒否する．レポートには既定値を埋めた設定をエコーする．
"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from ..audit.sampler import SegmentSampler
from ..errors import ConfigError
from ..model.spec import ModelSpec
from ..model.zoo import parse_zoo_params
from ..sdde.config import SimConfig

logger = logging.getLogger(__name__)

SpeciesKey = Union[int, str]
AuditCheck = Literal["drift", "growth", "nondegeneracy", "extinction", "lipschitz", "generator", "moment"]


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelBlock(_Block):
    name: Literal["competitive_lv", "predator_prey", "replicator", "sir", "chemostat"] = Field(
        description="組み込みモデル名"
    )
    params: Dict[str, Any] = Field(default_factory=dict, description="モデルのパラメータ")


class SimulateTask(_Block):
    face: Optional[List[SpeciesKey]] = Field(None, description="積分する面．省略時は全種")
    initial: Optional[List[float]] = Field(None, description="定数の初期セグメント．省略時は面の種を1")
    replicate: int = Field(0, ge=0, description="CSVに書き出すレプリケート")


class InvasionTask(_Block):
    face: List[SpeciesKey] = Field(default_factory=list, description="面 I（空なら δ*）")
    species: Optional[SpeciesKey] = Field(None, description="侵入する種．省略時は面の外の全種")
    method: Literal["time-average", "lyapunov-exponent"] = Field("time-average", description="推定法")
    closed_form: bool = Field(False, description="閉じた式を使う")


class ClassifyTask(_Block):
    closed_form: bool = Field(True, description="閉じた式があれば使う")
    basins: bool = Field(True, description="吸収面の確率を推定する")
    basin_horizon: Optional[float] = Field(None, gt=0, description="確率推定の horizon．省略時は sim と同じ")
    basin_replicates: Optional[int] = Field(None, ge=1, description="確率推定のレプリケート数")
    initial: Optional[List[float]] = Field(None, description="確率推定の定数初期値")


class AuditTask(_Block):
    certificate: Optional[Dict[str, Any]] = Field(None, description="証明書定数．省略時は格子探索")
    checks: List[AuditCheck] = Field(default_factory=lambda: ["drift"], description="実行する監査")
    sampler: SegmentSampler = Field(default_factory=SegmentSampler, description="セグメント標本の設定")
    epsilon: float = Field(0.1, gt=0, description="D_{ε,R} の ε")
    box_radius: float = Field(10.0, gt=0, description="D_{ε,R} の R")
    generator_segments: int = Field(3, ge=1, description="生成作用素の上界を調べるセグメント数")
    generator_samples: int = Field(1000, ge=2, description="1ステップのモンテカルロ標本数")


class OutputBlock(_Block):
    dir: str = Field("out", description="出力ディレクトリ")


class RunConfig(_Block):
    """設定ファイル全体（schema 1）"""

    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    schema_version: Literal[1] = Field(alias="schema", description="設定スキーマの版")
    model: ModelBlock
    sim: SimConfig
    simulate: SimulateTask = Field(default_factory=SimulateTask)
    invasion: InvasionTask = Field(default_factory=InvasionTask)
    classify: ClassifyTask = Field(default_factory=ClassifyTask)
    audit: AuditTask = Field(default_factory=AuditTask)
    output: OutputBlock = Field(default_factory=OutputBlock)

    def echo(self, model: ModelSpec) -> Dict[str, Any]:
        """既定値と dt を具体化した設定（そのまま読み戻せる）"""
        data = self.model_dump(mode="json", by_alias=True)
        data["model"]["params"] = parse_zoo_params(self.model.name, self.model.params).model_dump(mode="json")
        data["sim"] = self.sim.resolved(model.r).model_dump(mode="json")
        return data


def parse_run_config(data: Any) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError(f"設定の最上位はオブジェクトでなければなりません: {type(data).__name__}")
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"設定が不正です: {e}") from e


def load_run_config(path: Union[str, Path]) -> RunConfig:
    """JSON または YAML の設定ファイルを読み込む（拡張子 .json なら JSON）"""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"設定ファイルが見つかりません: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f) if path.suffix.lower() == ".json" else yaml.safe_load(f)
    except (OSError, json.JSONDecodeError, yaml.YAMLError) as e:
        raise ConfigError(f"設定ファイルを読めません: {path}: {e}") from e
    logger.debug(f"設定ファイルを読み込みました: {path}")
    return parse_run_config(data)
