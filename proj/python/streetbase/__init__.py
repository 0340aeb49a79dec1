"""Python face of the streetbase engine: JSON in, dicts out."""

import json

from . import _streetbase
from ._streetbase import EngineError, Service

__all__ = ["Engine", "EngineError", "Service", "round_extent", "altimetry_profile", "error_info"]


def error_info(exc):
    """Decode the {code, message} payload of an EngineError."""
    return json.loads(str(exc))


class Engine:
    def __init__(self, config=None, _native=None):
        self._native = _native or _streetbase.Engine(json.dumps(config) if config else "")

    @classmethod
    def open(cls, path):
        return cls(_native=_streetbase.Engine.open(str(path)))

    @property
    def native(self):
        return self._native

    def build_demo(self):
        self._native.build_demo()

    def save(self, path):
        self._native.save(str(path))

    def generate(self):
        return self._native.generate()

    def check(self):
        return list(self._native.check())

    def stats(self):
        return json.loads(self._native.stats())

    def config(self):
        return json.loads(self._native.config())

    def layers(self):
        return json.loads(self._native.layers())

    def query(self, layer, bbox=None):
        return json.loads(self._native.query(layer, bbox))

    def insert(self, layer, feature, session="python"):
        return json.loads(self._native.insert(layer, json.dumps(feature), session))

    def update(self, layer, feature, session="python"):
        return json.loads(self._native.update(layer, json.dumps(feature), session))

    def delete(self, layer, feature_id, session="python"):
        return json.loads(self._native.delete(layer, feature_id, session))

    def last_sequence(self):
        return self._native.last_sequence()


def round_extent(x1, y1, x2, y2):
    return json.loads(_streetbase.round_extent(x1, y1, x2, y2))


def altimetry_profile(line):
    return _streetbase.altimetry_profile(line)
