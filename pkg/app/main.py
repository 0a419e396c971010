from fastapi import FastAPI
from dotenv import load_dotenv
from app.routes.api.memory import router as memory_router
from app.routes.api.metrics import router as metrics_router
from app.routes.api.retention import router as retention_router
from app.routes.api.stream import router as stream_router

load_dotenv()

app = FastAPI(title="Dual-memory streaming engine")

@app.get("/")
def read_root():
    """Root endpoint for API status."""
    return {"message": "API is running"}

@app.get("/status")
def status_check():
    """Health check endpoint."""
    return {"status": "200"}

app.include_router(memory_router, prefix="/api/memory")
app.include_router(metrics_router, prefix="/api/metrics")
app.include_router(retention_router, prefix="/api/retention")
app.include_router(stream_router, prefix="/api/stream")
