import pytest

from sawteleport import geometry as geo
from sawteleport import protocol as pot
from sawteleport.propagator import NumericsParams


@pytest.fixture(scope="session")
def production_engine():
    """Dynamic engine on the shipped device at desk scale, basis cached.

    This is the expensive shared artifact of the acceptance suite: the
    Bell-preparation run, the per-branch measurement-stage evolutions and
    both coupler calibrations, at dy = 1 nm and dt = 1 fs.
    """
    cfg = pot.ProtocolConfig(
        blueprint=geo.default_blueprint(),
        physical=geo.PhysicalParams(),
        numerics=NumericsParams(dy=1.0, dt=1.0),
        mode="dynamic",
    )
    engine = pot.ProtocolEngine(cfg)
    engine.basis()
    return engine
