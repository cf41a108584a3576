"""Shared pytest fixtures for all tests."""

import pytest
from fastapi.testclient import TestClient

from main import app
from models import BuildConfig, Protocol
from services.dataset_builder import build_benchmark
from services.storage import evaluation_store, manifest_store, read_instances
from tests.factories import write_instances


@pytest.fixture(autouse=True)
def clear_stores():
    """Clear all stores before and after each test."""
    evaluation_store.clear()
    manifest_store.clear()
    yield
    evaluation_store.clear()
    manifest_store.clear()


@pytest.fixture
def test_client():
    """FastAPI test client."""
    return TestClient(app)


@pytest.fixture
def instances_file(tmp_path):
    """Two single-frame instances with three disjoint negatives each."""
    return write_instances(tmp_path / "inputs")


@pytest.fixture
def built_benchmark(tmp_path, instances_file):
    """An image-based benchmark built under tmp_path; yields (manifest, manifest_root)."""
    out = tmp_path / "bench"
    instances = read_instances(instances_file).instances
    manifest = build_benchmark(instances, BuildConfig(), 7, out, instances_root=instances_file.parent)
    return manifest, out


@pytest.fixture
def video_benchmark(tmp_path):
    """A three-frame benchmark built under both protocols."""
    instances_file = write_instances(tmp_path / "video-inputs", frame_count=3)
    out = tmp_path / "video-bench"
    config = BuildConfig(protocols=[Protocol.IMAGE_BASED, Protocol.VIDEO_BASED])
    manifest = build_benchmark(
        read_instances(instances_file).instances, config, 11, out, instances_root=instances_file.parent
    )
    return manifest, out
