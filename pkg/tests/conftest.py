import json

import numpy as np
import pytest

from stratcal.calcurve import CalibrationCurve, load_curve
from stratcal.model import parse_model


def identity_curve(lo=3000.0, hi=8000.0, step=1.0, offset=0.0, gamma=0.0, name="identity"):
    """mu(theta) = theta + offset with constant gamma."""
    cal = np.arange(lo, hi + step / 2, step)
    return CalibrationCurve(name, cal, cal + offset, np.full(cal.size, gamma))


def flat_curve(lo, hi, mu, gamma=0.0):
    cal = np.array([lo, hi], dtype=float)
    return CalibrationCurve("flat", cal, np.full(2, float(mu)), np.full(2, float(gamma)))


def model_from(obj):
    return parse_model(json.dumps(obj))


def single_context(dets, window=(7000, 6000), ordered=False, boundaries=True, cid="A"):
    return model_from({
        "calendar_window": list(window),
        "contexts": [{"id": cid, "internally_ordered": ordered, "boundaries": boundaries,
                      "determinations": [{"label": l, "x": x, "sigma": s} for l, x, s in dets]}],
        "relations": [],
    })


@pytest.fixture(scope="session")
def intcal():
    return load_curve("intcal13")


@pytest.fixture(scope="session")
def sequence_text():
    from importlib import resources
    return (resources.files("stratcal") / "data" / "sequence.json").read_text()


@pytest.fixture(scope="session")
def sequence(sequence_text):
    return parse_model(sequence_text)
