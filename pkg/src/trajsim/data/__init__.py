from .batching import Batch, iter_batches
from .corpus import (
    CityDataset,
    DataError,
    FrequencyProfile,
    LocationVocabulary,
    Trajectory,
    build_dataset,
    frequency_profile,
    load_dataset,
    save_dataset,
    split_sizes,
    split_trajectories,
)
from .geo import EARTH_RADIUS_KM, haversine_km
from .ingest import IngestionError, export_raw, ingest
from .synth import SynthSpec, relabeled_split_pair, synth_city

__all__ = [
    "Batch",
    "CityDataset",
    "DataError",
    "EARTH_RADIUS_KM",
    "FrequencyProfile",
    "IngestionError",
    "LocationVocabulary",
    "SynthSpec",
    "Trajectory",
    "build_dataset",
    "export_raw",
    "frequency_profile",
    "haversine_km",
    "ingest",
    "iter_batches",
    "load_dataset",
    "relabeled_split_pair",
    "save_dataset",
    "split_sizes",
    "split_trajectories",
    "synth_city",
]
