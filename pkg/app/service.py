import logging
import warnings
from typing import Optional

from app import __version__
from app.closed_forms import SUPPORTED, oracle_discrepancy
from app.models import NetworkParams, PerturbParams
from app.network import PatternSpec, SymmetryFrame, build_frame
from app.parametrization import FirstOrderSolution, first_order_solution
from app.reduced_dynamics import ReducedFixedPoint, is_degenerate, reduced_fixed_points

logger = logging.getLogger(__name__)


class TorusService:
    """Frame and normal-form computations behind the HTTP layer, with frames cached per network."""

    def __init__(self):
        self._frames: dict[tuple, SymmetryFrame] = {}

    def status(self) -> dict:
        return {
            "version": __version__,
            "patterns": list(SUPPORTED),
            "network": NetworkParams().model_dump(),
            "perturb": PerturbParams().model_dump(),
        }

    def frame(self, word: str, p: NetworkParams) -> SymmetryFrame:
        pattern = PatternSpec(word, p.n)
        key = (pattern.word, *p.model_dump().values())
        if key not in self._frames:
            logger.info("Building frame for %s (m=%d, n=%d)", pattern.word, p.m, p.n)
            self._frames[key] = build_frame(pattern, p)
        return self._frames[key]

    def normal_form(self, word: str, p: NetworkParams, q: PerturbParams, lmax: int) -> tuple[FirstOrderSolution, list[str], Optional[dict]]:
        frame = self.frame(word, p)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            sol = first_order_solution(frame.pattern, p, q, lmax=lmax, frame=frame)
        discrepancy = None
        if frame.pattern.word in SUPPORTED and p.m == 3 and p.n == 2:
            discrepancy = oracle_discrepancy(sol, p, q)
        return sol, [str(w.message) for w in caught], discrepancy

    def fixed_points(self, word: str, q: PerturbParams) -> tuple[list[ReducedFixedPoint], bool]:
        points = reduced_fixed_points(PatternSpec(word), q)
        return points, is_degenerate(points)


_torus_service: Optional[TorusService] = None


def get_torus_service() -> TorusService:
    global _torus_service
    if _torus_service is None:
        _torus_service = TorusService()
    return _torus_service
