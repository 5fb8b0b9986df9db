import numpy as np
import pytest

from thinlayer.mesh import build_interval_mesh, quadrature_points
from thinlayer.timestepping import StageProblem, StageSource


@pytest.fixture
def unit_interval_4():
    return build_interval_mesh(0.0, 1.0, 4)


def make_stage(mesh, backend="fv", dt=1.0, flux=None, flux_scale=1.0,
               source_values=None, u_prev=None, f=None, coeff=0.0, t=None):
    """Shorthand stage builder for direct solver tests."""
    x = quadrature_points(mesh, backend)
    n = x.shape[0]
    extra = None if source_values is None else np.asarray(source_values, dtype=float)
    t_new = dt if t is None else t
    return StageProblem(
        dt=dt, t_new=t_new, flux=flux,
        flux_scale=flux_scale if flux is not None else 0.0,
        source=StageSource(x=x, t=t_new, coeff=coeff, f=f, extra=extra),
        u_prev=np.zeros(n) if u_prev is None else np.asarray(u_prev, dtype=float))
