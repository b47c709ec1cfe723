"""
Report store

Keeps evaluation reports of past experiments:
- experiment_reports: one row per run with the config and full report JSON
- trial_results: NMSE (or the error) of every estimator, sample size and trial
"""
import logging
import os
from datetime import datetime
from typing import List, Optional

from sqlalchemy import Column, DateTime, Float, ForeignKey, Index, Integer, String, Text, create_engine
from sqlalchemy.orm import declarative_base, relationship, sessionmaker

from graphkernel.config import get_settings
from graphkernel.models import EvaluationReport

logger = logging.getLogger(__name__)

Base = declarative_base()


class ExperimentReport(Base):
    """One completed experiment run"""
    __tablename__ = "experiment_reports"

    id = Column(Integer, primary_key=True, autoincrement=True)
    name = Column(String(200), nullable=False, index=True)
    created_at = Column(DateTime, default=datetime.utcnow, index=True)
    seed = Column(Integer, nullable=False)
    trials = Column(Integer, nullable=False)
    runtime_seconds = Column(Float, nullable=False, default=0)

    config_json = Column(Text, nullable=False)
    report_json = Column(Text, nullable=False)

    # None when every trial failed
    best_estimator = Column(String(100), nullable=True)
    best_mean_nmse = Column(Float, nullable=True)

    trial_results = relationship("TrialResult", back_populates="report", cascade="all, delete-orphan")

    def __repr__(self):
        return f"<ExperimentReport {self.id} {self.name} seed={self.seed} trials={self.trials}>"


class TrialResult(Base):
    """Score of one estimator at one sample size in one trial"""
    __tablename__ = "trial_results"

    id = Column(Integer, primary_key=True, autoincrement=True)
    report_id = Column(Integer, ForeignKey("experiment_reports.id"), nullable=False)
    estimator = Column(String(100), nullable=False)
    sample_size = Column(Integer, nullable=False)
    trial = Column(Integer, nullable=False)
    nmse = Column(Float, nullable=True)
    error = Column(String(500), nullable=True)  # "<ErrorType>: message" for failed trials

    report = relationship("ExperimentReport", back_populates="trial_results")

    __table_args__ = (
        Index("ix_trial_lookup", "report_id", "estimator", "sample_size"),
    )


# Database engine and session
_engine = None
_SessionLocal = None


def get_database_url() -> str:
    """
    Database URL from DATABASE_URL or settings

    Hosted Postgres often hands out postgres:// but SQLAlchemy needs postgresql://
    """
    db_url = os.environ.get("DATABASE_URL")
    if db_url:
        if db_url.startswith("postgres://"):
            db_url = db_url.replace("postgres://", "postgresql://", 1)
        return db_url
    return get_settings().database_url


def init_db(db_url: Optional[str] = None):
    """Initialize the database (create tables)"""
    global _engine, _SessionLocal

    db_url = db_url or get_database_url()
    if _engine is not None:
        _engine.dispose()
    _engine = create_engine(db_url, echo=False)
    _SessionLocal = sessionmaker(bind=_engine)
    Base.metadata.create_all(bind=_engine)

    # Log without exposing credentials
    safe_url = db_url.split("@")[-1] if "@" in db_url else db_url
    logger.info(f"Database initialized: ...{safe_url}")


def get_session():
    """Get a database session"""
    if _SessionLocal is None:
        init_db()
    return _SessionLocal()


def close_db():
    """Close database connections"""
    global _engine, _SessionLocal
    if _engine is not None:
        _engine.dispose()
        logger.info("Database connections closed")
    _engine = None
    _SessionLocal = None


class ReportStore:
    """Saves and loads evaluation reports"""

    def save(self, report: EvaluationReport) -> int:
        session = get_session()
        try:
            best = report.best()
            record = ExperimentReport(
                name=report.name,
                created_at=report.created_at,
                seed=report.seed,
                trials=report.trials,
                runtime_seconds=report.runtime_seconds,
                config_json=report.config.model_dump_json(),
                report_json=report.model_dump_json(),
                best_estimator=best.estimator if best else None,
                best_mean_nmse=best.mean_nmse if best else None,
            )
            for result in report.results:
                errors = {f.trial: f"{f.error_type}: {f.message}"[:500] for f in result.failures}
                for trial, value in enumerate(result.trial_nmse):
                    record.trial_results.append(TrialResult(
                        estimator=result.estimator,
                        sample_size=result.sample_size,
                        trial=trial,
                        nmse=value,
                        error=errors.get(trial),
                    ))
            session.add(record)
            session.commit()
            logger.info(f"Stored report '{report.name}' as {record.id}")
            return record.id
        except Exception as e:
            logger.error(f"Error storing report '{report.name}': {e}")
            session.rollback()
            raise
        finally:
            session.close()

    def list_reports(self, limit: int = 50) -> List[dict]:
        """Most recent reports, newest first"""
        session = get_session()
        try:
            records = (
                session.query(ExperimentReport)
                .order_by(ExperimentReport.created_at.desc(), ExperimentReport.id.desc())
                .limit(limit)
                .all()
            )
            return [
                {
                    "id": r.id,
                    "name": r.name,
                    "created_at": r.created_at.isoformat() if r.created_at else None,
                    "seed": r.seed,
                    "trials": r.trials,
                    "runtime_seconds": r.runtime_seconds,
                    "best_estimator": r.best_estimator,
                    "best_mean_nmse": r.best_mean_nmse,
                }
                for r in records
            ]
        finally:
            session.close()

    def get_report(self, report_id: int) -> Optional[EvaluationReport]:
        session = get_session()
        try:
            record = session.get(ExperimentReport, report_id)
            if record is None:
                return None
            return EvaluationReport.model_validate_json(record.report_json)
        finally:
            session.close()

    def trial_results(self, report_id: int) -> List[dict]:
        session = get_session()
        try:
            rows = (
                session.query(TrialResult)
                .filter(TrialResult.report_id == report_id)
                .order_by(TrialResult.estimator, TrialResult.sample_size, TrialResult.trial)
                .all()
            )
            return [
                {
                    "estimator": r.estimator,
                    "sample_size": r.sample_size,
                    "trial": r.trial,
                    "nmse": r.nmse,
                    "error": r.error,
                }
                for r in rows
            ]
        finally:
            session.close()


# Singleton instance
_store: Optional[ReportStore] = None


def get_report_store() -> ReportStore:
    """Get the report store singleton"""
    global _store
    if _store is None:
        _store = ReportStore()
    return _store
