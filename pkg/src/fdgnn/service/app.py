"""FastAPI service exposing experiment runs, grid search, synthesis, reports.

Runs execute synchronously in the request; at desk scale an experiment is
minutes of CPU, and the bundled CLI talks to the app in-process so there
are no transport timeouts. File-system paths in requests refer to the
machine the service runs on.
"""

from __future__ import annotations

import json
from pathlib import Path

from fastapi import FastAPI
from fastapi.responses import JSONResponse

from ..errors import ConfigError, DataError
from ..harness import (ExperimentConfig, RunReport, emit_figures_data,
                       grid_search, run_experiment)
from ..synth import SynthSpec, preset_spec, synth_graph
from ..graphs import save_bundle
from .schemas import (ExperimentRequest, FiguresRequest, FiguresResponse,
                      GridRequest, GridResponse, RunResponse, SynthRequest,
                      SynthResponse)


def create_app() -> FastAPI:
    app = FastAPI(title="fdgnn", version="0.1.0")

    @app.exception_handler(ConfigError)
    async def _config_error(request, exc):
        return JSONResponse(status_code=400,
                            content={"error": {"type": "config",
                                               "message": str(exc)}})

    @app.exception_handler(DataError)
    async def _data_error(request, exc):
        return JSONResponse(status_code=400,
                            content={"error": {"type": "data",
                                               "message": str(exc)}})

    @app.get("/health")
    def health():
        return {"status": "ok"}

    @app.post("/runs", response_model=RunResponse)
    def runs(req: ExperimentRequest) -> RunResponse:
        cfg = ExperimentConfig.from_dict(req.to_config_dict())
        report = run_experiment(cfg, save_models_dir=req.save_models_dir)
        return RunResponse(report=json.loads(report.to_json()),
                           wall_time_s=report.wall_time_s)

    @app.post("/grid", response_model=GridResponse)
    def grid(req: GridRequest) -> GridResponse:
        base = ExperimentConfig.from_dict(req.base.to_config_dict())
        res = grid_search(base, lr_grid=tuple(req.lr_grid),
                          hidden_grid=tuple(req.hidden_grid))
        return GridResponse(best_config=res.best_config,
                            best_val_loss=res.best_val_loss, table=res.table)

    @app.post("/synth", response_model=SynthResponse)
    def synth(req: SynthRequest) -> SynthResponse:
        doc = req.spec.to_spec_dict()
        preset = doc.pop("preset", None)
        if preset is not None:
            spec = preset_spec(preset, **doc)
        else:
            try:
                spec = SynthSpec(**doc)
            except TypeError as e:
                raise ConfigError(f"bad synthetic spec: {e}") from e
        bundle = synth_graph(spec)
        out = save_bundle(req.out_dir, bundle)
        return SynthResponse(out_dir=str(out), num_nodes=bundle.num_nodes,
                             num_classes=bundle.num_classes,
                             feature_dim=bundle.feature_dim,
                             undirected_edges=bundle.directed_edge_count // 2)

    @app.post("/reports/figures", response_model=FiguresResponse)
    def figures(req: FiguresRequest) -> FiguresResponse:
        reports = []
        for p in req.report_paths:
            path = Path(p)
            if not path.is_file():
                raise DataError(f"report file not found: {path}")
            reports.append(RunReport.from_json(path.read_text()))
        written = emit_figures_data(reports, req.out_dir, channel=req.channel)
        return FiguresResponse(written=[str(p) for p in written])

    return app


app = create_app()
