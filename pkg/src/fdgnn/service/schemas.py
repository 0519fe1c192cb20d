"""Pydantic request/response models for the experiment service."""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field


class SynthSpecModel(BaseModel):
    preset: Optional[str] = None
    nodes: Optional[int] = None
    classes: Optional[int] = None
    homophily: Optional[float] = None
    feature_dim: Optional[int] = None
    avg_degree: Optional[float] = None
    seed: int = 0
    class_sep: float = 1.0
    edges: Optional[int] = None

    def to_spec_dict(self) -> dict:
        doc = self.model_dump(exclude_none=True)
        return doc


class ExperimentRequest(BaseModel):
    """Mirrors ExperimentConfig; unset fields take the config defaults."""

    arch: str = "gcn"
    mode: str = "gnn"
    bundle: Optional[str] = None
    synthetic: Optional[SynthSpecModel] = None
    k: Optional[int] = None
    rounds: int = 400
    lr: float = 0.01
    hidden: int = 256
    heads: int = 8
    pool_dim: int = 512
    batch_cap: int = 1024
    neighbor_cap: int = 25
    momentum: float = 0.9
    weight_decay: float = 0.0005
    patience: Optional[int] = None
    edge_keep: float = 1.0
    seed: int = 0
    repeats: int = 1
    residual: bool = False
    split_mode: str = "transductive"
    train_frac: float = 0.1
    val_frac: float = 0.1
    train_per_class: Optional[int] = None
    val_total: Optional[int] = None
    attribution: str = "sender"
    log_events: bool = False
    save_models_dir: Optional[str] = None

    def to_config_dict(self) -> dict:
        doc = self.model_dump(exclude={"save_models_dir"})
        if doc.get("synthetic") is not None:
            doc["synthetic"] = self.synthetic.to_spec_dict()
        if doc.get("k") is None:
            doc.pop("k")
        return doc


class RunResponse(BaseModel):
    report: dict
    wall_time_s: float


class GridRequest(BaseModel):
    base: ExperimentRequest
    lr_grid: list[float] = Field(default=[0.005, 0.01, 0.025, 0.05, 0.075, 0.1])
    hidden_grid: list[int] = Field(default=[64, 128, 256])


class GridResponse(BaseModel):
    best_config: dict
    best_val_loss: float
    table: list[dict]


class SynthRequest(BaseModel):
    spec: SynthSpecModel
    out_dir: str


class SynthResponse(BaseModel):
    out_dir: str
    num_nodes: int
    num_classes: int
    feature_dim: int
    undirected_edges: int


class FiguresRequest(BaseModel):
    report_paths: list[str]
    out_dir: str
    channel: str = "total"


class FiguresResponse(BaseModel):
    written: list[str]


class ErrorBody(BaseModel):
    type: str  # "config" | "data"
    message: str
