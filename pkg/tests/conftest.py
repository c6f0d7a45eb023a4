import json
import os

import pytest

from branchlab import RateProfile, constant_media, parse_media_spec

CONFIG_DIR = os.path.join(os.path.dirname(__file__), "..", "configs")


def load_config(name):
    with open(os.path.join(CONFIG_DIR, name)) as fh:
        return fh.read()


@pytest.fixture(scope="session")
def cosine_media():
    return parse_media_spec(load_config("cosine.json"))


@pytest.fixture(scope="session")
def cosine_profile(cosine_media):
    # shared across the identity/kernel checks; the tilt cache makes the
    # second and later consumers nearly free
    return RateProfile(cosine_media, n=256)


@pytest.fixture(scope="session")
def cosine_profile_small(cosine_media):
    return RateProfile(cosine_media, n=64)


@pytest.fixture(scope="session")
def yule_media():
    return constant_media(1, a=1.0, b=0.0, alpha=1.0, beta=0.0)


def cosine_config_dict():
    return json.loads(load_config("cosine.json"))
