"""Speech audio to spike events through an inner-ear model, and spiking classifiers trained on them."""

from .audio import AudioClip, decode_wav, normalize_rms_db, apply_hann_ramps
from .cochlea import BmParams, CochlearTransfer, build_transfer, bm_velocity
from .events import DatasetContainer, EventStream, read_container, write_container
from .haircell import HcParams, simulate_channel, simulate_hc
from .lif import LifLayerConfig, bushy_forward, run_layer, run_readout
from .pipeline import PipelineConfig, calibrate, convert_clip, convert_corpus

__version__ = "0.1.0"
