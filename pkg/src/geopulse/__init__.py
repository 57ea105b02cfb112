"""geopulse: learn a city's usual crowds from geo-tagged posts, flag the
unusual ones, and rank the story threads that explain them."""

__version__ = "0.1.0"

from .errors import ConfigError, GeopulseError, InsufficientData, PatternFormatError, PatternMissing
from .geo import Clustering, DbscanParams, dbscan, estimate_params, haversine
from .ingest import GeoPoint, Geofence, Post, TimeSlotKey, parse_posts, slot_key
from .kernels import BACKEND
from .pattern import CityPattern, load_pattern, save_pattern, train_slot
from .detect import OutlierClass, detect_slot
from .threads import discover_threads

__all__ = [
    "BACKEND", "CityPattern", "Clustering", "ConfigError", "DbscanParams", "GeoPoint", "Geofence",
    "GeopulseError", "InsufficientData", "OutlierClass", "PatternFormatError", "PatternMissing", "Post",
    "TimeSlotKey", "dbscan", "detect_slot", "discover_threads", "estimate_params", "haversine",
    "load_pattern", "parse_posts", "save_pattern", "slot_key", "train_slot",
]
