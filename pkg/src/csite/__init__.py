"""PHY-layer source authentication of Wi-Fi management frames from CSI."""

__version__ = "0.1.0"

from .assurance import CreConfig, NackMessage, decode_nack, encode_nack, precursor_length, sender_step
from .channel import ScenarioConfig, Trace, decimate, run_scenario
from .csi import CsiMatrix, Frame, FrameType, ReducedPoint, Source, amplitudes, euclidean_dist, reduce
from .detector import Detector, DetectorConfig, SlidingWindow, Verdict
from .harness import DetectorKind, evaluate, evaluate_cre, sweep
