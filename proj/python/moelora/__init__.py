# Copyright 2026 The moelora Authors. All Rights Reserved.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Python front end for the moelora C++ core.

Configs are plain dicts mirroring the JSON config format; they are
serialized and validated by the core on every call.
"""

import json

from . import _moelora
from ._moelora import (
    ConfigError,
    ContractError,
    InputError,
    IntegrityError,
    ShapeError,
    TrainingError,
    balance_loss,
    info_nce,
    normalized_mutual_information,
    route,
    routing_confidence,
    weighted_average,
)

__version__ = _moelora.__version__


def _dump(config):
    return config if isinstance(config, str) else json.dumps(config)


def default_config():
    return json.loads(_moelora.default_config_json())


def gradcheck_config(seed=0):
    return json.loads(_moelora.gradcheck_config_json(seed))


def canonical_config(config):
    return json.loads(_moelora.canonical_config(_dump(config)))


def config_hash(config):
    return _moelora.config_hash(_dump(config))


def aggregate_scores(text):
    return _moelora.aggregate_scores(text)


def lr_at(step, config=None):
    return _moelora.lr_at(step, _dump(config or {}))


def model(config):
    return _moelora.Model(_dump(config))


def train(config, stop_at=None):
    out = _moelora.train(_dump(config), stop_at)
    out["metrics"] = [json.loads(line) for line in out["metrics"]]
    return out


def resume(checkpoint, stop_at=None):
    out = _moelora.resume(checkpoint, stop_at)
    out["metrics"] = [json.loads(line) for line in out["metrics"]]
    return out


def load_model(checkpoint):
    return _moelora.load_model(checkpoint)


def gradcheck(config=None):
    return _moelora.gradcheck(None if config is None else _dump(config))
