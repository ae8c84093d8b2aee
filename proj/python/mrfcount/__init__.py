# Copyright (c) 2026 The mrfcount Authors. All Rights Reserved.
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

"""Multi-resolution fusion crowd counting (C++ core)."""

from ._core import (
    ModelConfig,
    Network,
    column_specs,
    combine_counts,
    compute_metrics,
    format_run_config,
    lr_at_epoch,
    mse_loss,
    run_checks,
    synth_generate,
    tile_counts,
    total_loss,
    train,
)

__all__ = [
    "ModelConfig",
    "Network",
    "column_specs",
    "combine_counts",
    "compute_metrics",
    "format_run_config",
    "lr_at_epoch",
    "mse_loss",
    "run_checks",
    "synth_generate",
    "tile_counts",
    "total_loss",
    "train",
]
