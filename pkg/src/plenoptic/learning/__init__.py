"""Scene learning: forward model, robust cost, estimators and the dent-panel pipeline."""
from .estimators import BrdfFitter, FrankotChellappa, LightfieldReconstructor, NormalSolver
from .integrate import integrate_gradients, integrate_normals
from .pipeline import run_panel

__all__ = ["BrdfFitter", "FrankotChellappa", "LightfieldReconstructor", "NormalSolver", "integrate_gradients",
           "integrate_normals", "run_panel"]
