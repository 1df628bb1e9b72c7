"""Clinical acoustic features and cross-lingual dysarthria severity classification."""

from .dsp import PitchTrack, PulseTrain, Waveform, read_wav
from .experiment import ExperimentConfig, load_manifest, run_experiment
from .features import FEATURE_GROUPS, FEATURE_NAMES, extract_all, phoneme_correctness
from .gbdt import Ensemble, TrainConfig, TrainMatrix, train
from .pipeline import CrossTable, CVReport, FeatureTable, Strategy, assemble, evaluate_loso, select_features
from .textgrid import PhoneClassMap, Tier, parse_textgrid, read_textgrid

__version__ = "0.1.0"
