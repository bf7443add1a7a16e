"""
Error hierarchy shared by the numerical services, the CLI and the HTTP layer.
Everything raised on purpose derives from MeshfreeError.
"""

import numpy as np


class MeshfreeError(Exception):
    pass


class ConfigError(MeshfreeError):
    pass


class ProjectionError(MeshfreeError):
    def __init__(self, last_iterate, residual: float):
        self.last_iterate = np.asarray(last_iterate, dtype=float)
        self.residual = float(residual)
        super().__init__(
            f"Newton projection did not converge (|phi|={self.residual:.3e} at {self.last_iterate.tolist()})"
        )


class DegeneratePointError(MeshfreeError):
    """Level-set gradient vanishes at the evaluation point."""


class SamplingError(MeshfreeError):
    pass


class ComponentError(MeshfreeError):
    """A boundary curve component is too small to carry a trio rule."""


class DegenerateCellError(MeshfreeError):
    pass


class MissingCurvatureError(MeshfreeError):
    pass


class ZeroDirectionError(MeshfreeError):
    pass


class SingularAnchorError(MeshfreeError):
    pass


class AnchorOutsideBoxError(MeshfreeError):
    pass


class NonFiniteSystemError(MeshfreeError):
    pass


class EmptySystemError(MeshfreeError):
    pass


class IllConditionedError(MeshfreeError):
    def __init__(self, message: str):
        super().__init__(f"{message}; use the rank-revealing V-path (solver='v_path') instead")


class ConditioningError(MeshfreeError):
    pass


class SubdomainSolveError(MeshfreeError):
    def __init__(self, subdomain_id: int, cause: Exception):
        self.subdomain_id = subdomain_id
        self.cause = cause
        super().__init__(f"subdomain {subdomain_id}: {cause}")


class EndpointError(MeshfreeError):
    pass


class NonUniformSpacingError(MeshfreeError):
    pass
