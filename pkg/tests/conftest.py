import json

import numpy as np
import pytest

from numerics import rotation
from sysmodel import LinearSystem
from topology import Topology

RING3 = [[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]]


def matrix_payload(name, arr):
    arr = np.atleast_2d(np.asarray(arr, dtype=float))
    return {"name": name, "rows": arr.shape[0], "cols": arr.shape[1], "data": [float(x) for x in arr.ravel()]}


@pytest.fixture
def ring3():
    return Topology.from_matrix(RING3)


@pytest.fixture
def rotation_system():
    # 旋转 + 位置输出
    return LinearSystem(rotation(1.0), [[1.0, 0.0]])


@pytest.fixture
def write_json(tmp_path):
    def _write(name, payload):
        path = tmp_path / name
        path.write_text(json.dumps(payload), encoding="utf-8")
        return path
    return _write


@pytest.fixture
def system_file(write_json):
    def _system(name, a, c):
        return write_json(name, {"name": name, "a": matrix_payload("A", a), "c": matrix_payload("C", c)})
    return _system


@pytest.fixture
def topology_file(write_json):
    def _topology(name, lam):
        return write_json(name, {"name": name, "lambda": matrix_payload("Λ", lam)})
    return _topology


@pytest.fixture
def matrix_json():
    return matrix_payload
