import pytest

from modserve.profile import demo_profile
from modserve.scheduler import Job
from modserve.strategy import build_matrix, candidates_for_job, recommended_alphas

MS = 1000


@pytest.fixture(scope="session")
def demo():
    return demo_profile()


@pytest.fixture(scope="session")
def demo_matrix(demo):
    return build_matrix(demo, [1, 2], recommended_alphas(demo))


@pytest.fixture()
def make_job(demo_matrix):
    """Job factory with millisecond times and highest-accuracy default."""

    def _make(jid, arrival_ms, size, slo, deadline_ms):
        cands = candidates_for_job(demo_matrix, size, slo)
        job = Job(
            id=jid,
            arrival_us=arrival_ms * MS,
            size=size,
            accuracy_slo=slo,
            deadline_us=deadline_ms * MS,
            candidates=cands,
        )
        job.assigned_idx = len(cands) - 1
        return job

    return _make
