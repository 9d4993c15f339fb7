from datetime import datetime
from enum import Enum as PyEnum

from sqlalchemy import (
    Column,
    Integer,
    String,
    Float,
    DateTime,
    Text,
    ForeignKey,
    Enum as SQLEnum,
)
from sqlalchemy.orm import declarative_base, relationship

Base = declarative_base()

# ---------- ENUMs ----------

class RunStatus(str, PyEnum):
    RUNNING = "running"
    FINISHED = "finished"
    DIVERGED = "diverged"
    FAILED = "failed"

# ---------- Run ----------

class Run(Base):
    __tablename__ = "runs"

    id = Column(Integer, primary_key=True, autoincrement=True)

    # synth / degrade / train / eval / diagnose / ablate
    command = Column(String(32), nullable=False)
    run_dir = Column(String(1024), nullable=False)
    argv = Column(Text)

    seed = Column(Integer, nullable=True)
    loss_variant = Column(String(32), nullable=True)
    ablation_model = Column(Integer, nullable=True)

    status = Column(SQLEnum(RunStatus), default=RunStatus.RUNNING)
    note = Column(Text, nullable=True)

    started_at = Column(DateTime, default=datetime.utcnow)
    finished_at = Column(DateTime, nullable=True)

    metrics = relationship("MetricRecord", back_populates="run", cascade="all, delete-orphan")

# ---------- MetricRecord ----------

class MetricRecord(Base):
    __tablename__ = "metric_records"

    id = Column(Integer, primary_key=True, autoincrement=True)
    run_id = Column(Integer, ForeignKey("runs.id", ondelete="CASCADE"), nullable=False)

    # legan / bicubic / oracle_identity / model_<n>
    method = Column(String(64), nullable=False)

    psnr = Column(Float)
    ssim = Column(Float)
    pi = Column(Float)
    sam = Column(Float)
    sre = Column(Float)
    n_cubes = Column(Integer)

    created_at = Column(DateTime, default=datetime.utcnow)

    run = relationship("Run", back_populates="metrics")
