"""Small scenario documents shared by the sim and CLI tests."""
import copy

BASE = {
    "name": "unit",
    "duration": 2.0,
    "dt": 0.001,
    "control_period": 0.05,
    "seed": 5,
    "bodies": [
        {"id": "roboat", "kind": "robot", "pose": [0.0, 0.0, 0.0]},
        {"id": "dummy", "kind": "dummy", "pose": [2000.0, 0.0, 0.0]},
    ],
    "tags": [{"id": 3, "body": "dummy", "offset": [-500.0, 0.0, 180.0]}],
    "latch": {"robot": "roboat", "target": "dummy", "tag_id": 3, "funnel_mode": "one_dof"},
    "camera": {"mount": [0.0, 0.0, 0.0]},
}


def doc(**changes):
    d = copy.deepcopy(BASE)
    d.update(copy.deepcopy(changes))
    return d
