"""2D topology optimization with unilevel variational updates.

The optimizer advances a pseudo-time target on the void volume fraction and,
at each iteration, turns a regularized pseudo-energy field into the next
topology through a closed-form threshold update whose level is found by
bracketed root finding on the volume constraint.

Heavy submodules are imported lazily so that the command-line entry point can
configure threading before any numerical library loads.
"""

__version__ = "0.1.0"

_EXPORTS = {
    "StructuredGrid": "grid",
    "build_grid": "grid",
    "dof_table": "grid",
    "select_nodes": "grid",
    "Isotropic2D": "material",
    "ThermalMaterial": "material",
    "InterpolationLaw": "material",
    "constitutive": "material",
    "conductivity": "material",
    "interp_property": "material",
    "gauss_rule": "fem",
    "element_kit": "fem",
    "assemble_stiffness": "fem",
    "solve_linear": "fem",
    "SparseSystem": "fem",
    "build_laplacian": "smoothing",
    "smooth": "smoothing",
    "TimeSchedule": "optimizer",
    "RunOptions": "optimizer",
    "time_steps": "optimizer",
    "compute_volume": "optimizer",
    "find_lambda": "optimizer",
    "run": "optimizer",
    "ProblemDefinition": "problems",
    "example_library": "problems",
}

__all__ = sorted(_EXPORTS) + ["__version__"]


def __getattr__(name):
    if name in _EXPORTS:
        import importlib

        module = importlib.import_module(f".{_EXPORTS[name]}", __name__)
        return getattr(module, name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
