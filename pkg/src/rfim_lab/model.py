"""Model container: coupling matrix, external field, site measures.

The Gibbs law of interest reweights the product of the site measures by
exp(0.5 * sigma' A sigma + c' sigma).  A ModelInstance bundles the three
ingredients and provides vectorized per-site tilted-moment evaluations
that transparently handle a shared measure or heterogeneous sites.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .coupling import CouplingMatrix
from .measures import BaseMeasure, TiltingToolkit, as_toolkit


@dataclass
class ModelInstance:
    """Coupling matrix A, field vector c, and one toolkit per site."""

    coupling: CouplingMatrix
    field_vector: np.ndarray
    site_toolkits: list  # length n, entries may repeat (shared measure)
    rho: Optional[float] = None  # declared high-temperature bound, if any

    def __post_init__(self):
        self.field_vector = np.asarray(self.field_vector, dtype=np.float64)
        n = self.coupling.n
        if self.field_vector.shape != (n,):
            raise ValueError(
                f"field vector has shape {self.field_vector.shape}, expected ({n},)"
            )
        if len(self.site_toolkits) != n:
            raise ValueError("need one measure per site")
        # Group sites by toolkit identity once; the per-site vectorized
        # evaluations below iterate over groups, not sites.
        groups = {}
        for i, tk in enumerate(self.site_toolkits):
            groups.setdefault(id(tk), (tk, []))[1].append(i)
        self._groups = [
            (tk, np.asarray(idx, dtype=np.intp)) for tk, idx in groups.values()
        ]

    @property
    def n(self) -> int:
        return self.coupling.n

    @property
    def shared_toolkit(self) -> Optional[TiltingToolkit]:
        if len(self._groups) == 1:
            return self._groups[0][0]
        return None

    def _per_site(self, method, x):
        x = np.asarray(x, dtype=np.float64)
        if len(self._groups) == 1:
            return np.asarray(getattr(self._groups[0][0], method)(x))
        out = np.empty_like(x)
        for tk, idx in self._groups:
            out[idx] = getattr(tk, method)(x[idx])
        return out

    def site_tilted_mean(self, x):
        """psi_i'(x_i) for each site i."""
        return self._per_site("tilted_mean", x)

    def site_tilted_variance(self, x):
        """psi_i''(x_i) for each site i."""
        return self._per_site("tilted_variance", x)

    def site_inverse_mean(self, z):
        """The inverse-mean map applied per site."""
        return self._per_site("inverse_mean", z)

    def site_rate_function(self, z):
        """Rate function I_i(z_i) per site."""
        return self._per_site("rate_function", z)


def make_model(
    coupling: CouplingMatrix,
    field_vector,
    measure: Union[BaseMeasure, TiltingToolkit, Sequence],
    rho: Optional[float] = None,
) -> ModelInstance:
    """Build a ModelInstance from a shared measure or a per-site sequence."""
    n = coupling.n
    if isinstance(measure, (BaseMeasure, TiltingToolkit)):
        tk = as_toolkit(measure)
        toolkits = [tk] * n
    else:
        toolkits = [as_toolkit(m) for m in measure]
    return ModelInstance(coupling, field_vector, toolkits, rho=rho)
