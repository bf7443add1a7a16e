from fastapi import APIRouter, UploadFile, File, Form
from fastapi.responses import StreamingResponse
from pydantic import BaseModel, Field
import io
import math

from app.services.geometry import SamplingMode, sample_surface
from app.services.harness import EXPERIMENTS, ExperimentConfig, run_convergence
from app.services.surfaces import get_domain
from app.utils.io import cloud_frame, read_cloud_csv, write_weights_csv
from app.versions import APP_VERSION

router = APIRouter()

@router.get("/health")
def health():
    return {"status": "ok", "version": APP_VERSION}

@router.get("/experiments")
def experiments():
    return {"experiments": sorted(EXPERIMENTS)}

class SampleIn(BaseModel):
    surface: str
    n: int = Field(gt=0, le=100_000)
    mode: SamplingMode = SamplingMode.FARTHEST_POINT
    seed: int = 0

@router.post("/sample")
def sample(body: SampleIn):
    cloud = sample_surface(get_domain(body.surface), body.n, body.mode, seed=body.seed)
    return {"surface": body.surface, "seed": body.seed, "points": cloud_frame(cloud).to_dict(orient="records")}

@router.post("/weights")
async def weights(file: UploadFile = File(...), surface: str = Form(...), g_integral: float = Form(...)):
    from app.cli import compute_weights
    data = await file.read()
    cloud = read_cloud_csv(io.BytesIO(data))
    w = compute_weights(surface, cloud, g_integral)
    buf = io.StringIO()
    write_weights_csv(cloud.positions, w, buf)
    return StreamingResponse(io.BytesIO(buf.getvalue().encode()), media_type="text/csv")

@router.post("/run")
def run(body: ExperimentConfig):
    rows = run_convergence(body, write=False)
    # failed rows carry NaN, which JSON cannot encode
    clean = [{k: None if isinstance(v, float) and math.isnan(v) else v for k, v in r.model_dump().items()} for r in rows]
    return {"experiment": body.experiment, "rows": clean}
