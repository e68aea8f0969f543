import pytest

from physforge import physdb
from physforge.curation import BBox, DetectedObject
from physforge.retrieval import RetrievalResult, RetrievalTier
from physforge.verification import verify_tag


@pytest.fixture(scope="session")
def bundled_db():
    return physdb.load_bundled()


@pytest.fixture
def steel_ball_tag(bundled_db):
    """A VerifiedTag backed by the bundled steel-ball prototype."""
    proto = bundled_db.lookup("steel ball")
    assert proto is not None
    obj = DetectedObject(
        image_id="img_0001",
        bbox=BBox(x=0.2, y=0.3, w=0.4, h=0.5),
        label_candidates=("steel ball",),
        confidence=0.9,
    )
    result = RetrievalResult(
        label=proto.label,
        properties=proto.properties,
        state=proto.state,
        tier=RetrievalTier.EXACT,
        prototype_id=proto.id,
    )
    tag = verify_tag(obj, result)
    assert not hasattr(tag, "violations")
    return tag
