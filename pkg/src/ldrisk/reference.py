"""Reference models shipped with the package.

``lgq``: one factor, one asset, alpha(x) = x, beta(x) = -x, sigma = lambda = 1,
with the asset and the factor driven by the same Brownian component.  It is
the scalar member of the linear-Gaussian class and has a Riccati closed form.

``merton``: constant coefficients, alpha = 0.3, sigma = 1, r = 0, with a
driftless factor on an independent Brownian component.
"""
from importlib import resources

from .model import loads_model

REFERENCE_MODELS = ("lgq", "merton")


def reference_config(name: str) -> str:
    if name not in REFERENCE_MODELS:
        raise KeyError(f"unknown reference model {name!r}")
    return resources.files("ldrisk.data").joinpath(f"{name}.json").read_text()


def reference_model(name: str):
    return loads_model(reference_config(name))


def lgq_model():
    return reference_model("lgq")


def merton_model():
    return reference_model("merton")
