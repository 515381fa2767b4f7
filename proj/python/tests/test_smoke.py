import json
import math

import numpy as np
import pytest

import stnlab


def test_param_counts():
    assert stnlab.param_count("mnist-r/cnn") == 54122
    assert stnlab.param_count("mnist-s/stn-dl1") == 138384
    assert "mnist-t/stn-sl1" in stnlab.spec_names()
    assert json.loads(stnlab.spec_json("mnist-r/stn-c1"))["name"] == "mnist-r/stn-c1"


def test_unknown_spec_raises():
    with pytest.raises(stnlab.Error):
        stnlab.param_count("mnist-r/nope")


def test_similarity_and_inverse():
    scale, degrees = stnlab.fit_similarity([1, 0.5, 0, 0, 1, 0])
    assert degrees == pytest.approx(-14.036243, abs=1e-6)
    assert scale == pytest.approx(1.0307764, abs=1e-6)
    a = [1.2, -0.3, 0.1, 0.4, 0.9, -0.2]
    assert stnlab.compose(a, stnlab.invert(a)) == pytest.approx([1, 0, 0, 0, 1, 0], abs=1e-12)


def test_synthesis_is_deterministic():
    a = stnlab.synthesize("T", 8, 3)
    b = stnlab.synthesize("T", 8, 3)
    assert a["checksum"] == b["checksum"]
    assert a["images"].shape == (8, 60, 60)
    assert a["images"].dtype == np.float32
    assert np.array_equal(a["images"], b["images"])
    assert stnlab.synthesize("T", 8, 4)["checksum"] != a["checksum"]


def test_audit():
    assert stnlab.audit("translation", 4)["residual_same"] == 0.0
    half = stnlab.audit("rotation", 180, "mirrored-pair")
    assert half["residual_perm"] == 0.0
    assert half["permutation"] == [1, 0]
    assert stnlab.audit("rotation", 45)["residual_perm"] > 0
    assert stnlab.overlap("scale", 2) == 0.25
    assert stnlab.overlap("rotation", 45) == pytest.approx(2 * (math.sqrt(2) - 1), abs=1e-12)
    with pytest.raises(ValueError):
        stnlab.audit("rotation", 45, "nope")


def test_identity_pose_spread():
    assert stnlab.identity_pose_spread(300) == pytest.approx(180 / math.sqrt(12), abs=3)
