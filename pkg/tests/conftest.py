import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from sqj2.accel.model import AccelConfig
from sqj2.fmap import FeatureMap
from sqj2.graph import ConvSpec
from sqj2.params import ParamBlob

settings.register_profile(
    "sqj2",
    max_examples=60,
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("sqj2")


def random_fixed_layer(rng: np.random.Generator, h_max: int = 32, w_max: int = 32,
                       chi_max: int = 64, cho_max: int = 64):
    """One random int8 conv problem: (spec, input map, blob, out_fl).

    Formats are drawn so the bias shift is a valid left shift and the output
    shift stays inside the supported envelope.
    """
    k = int(rng.choice([1, 3]))
    s = int(rng.choice([1, 2]))
    p = int(rng.choice([0, 1]))
    h = int(rng.integers(k, h_max + 1))
    w = int(rng.integers(k, w_max + 1))
    chi = int(rng.integers(1, chi_max + 1))
    cho = int(rng.integers(1, cho_max + 1))
    relu = bool(rng.integers(0, 2))
    spec = ConvSpec(h, w, chi, k, s, p, cho, use_relu=relu)
    fl_in = int(rng.integers(0, 8))
    fl_w = int(rng.integers(0, 8))
    acc_fl = fl_in + fl_w
    fl_b = int(rng.integers(max(acc_fl - 12, -4), acc_fl + 1))
    out_fl = int(rng.integers(acc_fl - 10, acc_fl + 3))
    x = rng.integers(-128, 128, size=(h, w, chi), dtype=np.int8)
    wts = rng.integers(-128, 128, size=(cho, k, k, chi), dtype=np.int8)
    bias = rng.integers(-128, 128, size=cho, dtype=np.int8)
    from sqj2.fxp import FxpFormat

    fmap = FeatureMap(x, FxpFormat(fl_in))
    blob = ParamBlob(f"layer_{rng.integers(1 << 30)}", wts, bias, fl_w, fl_b)
    return spec, fmap, blob, out_fl


def wide_config() -> AccelConfig:
    """Bounds loose enough that random single layers never partition."""
    return AccelConfig(wi_x_chi_max=1 << 16, kxkxchi_max=4608,
                       q_choxkxkxchi_max=1 << 20, q_cho_max=1 << 12,
                       cho_max=1 << 12)


@pytest.fixture
def rng():
    return np.random.default_rng(0xC0FFEE)
