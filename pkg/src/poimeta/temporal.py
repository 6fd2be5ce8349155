"""Clock-time identities of slots and their learned embeddings.

Every 15-minute slot is identified by a daily id (96 per day) and a
weekly id (7 weekdays).  The pair becomes a 103-dimensional one-hot
vector; a small two-layer MLP projects it to the model width and the
projected rows split into the input-window part E1 and the target-window
part E2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

DAILY_SLOTS = 96
WEEKLY_SLOTS = 7
EMBED_DIM = DAILY_SLOTS + WEEKLY_SLOTS  # 103


@dataclass(frozen=True)
class SlotTimestamp:
    daily_id: int
    weekly_id: int

    def __post_init__(self):
        if not 0 <= self.daily_id < DAILY_SLOTS:
            raise ValueError(f"daily_id out of range: {self.daily_id}")
        if not 0 <= self.weekly_id < WEEKLY_SLOTS:
            raise ValueError(f"weekly_id out of range: {self.weekly_id}")


def slot_ids(absolute_slot: int, start_weekday: int = 0,
             start_daily_slot: int = 0) -> SlotTimestamp:
    """Wall-clock identity of a slot offset from the dataset start."""
    if absolute_slot < 0:
        raise ValueError("absolute_slot must be non-negative")
    total = start_daily_slot + absolute_slot
    daily = total % DAILY_SLOTS
    weekly = (start_weekday + total // DAILY_SLOTS) % WEEKLY_SLOTS
    return SlotTimestamp(daily, weekly)


def build_embedding(ids: list[SlotTimestamp]) -> np.ndarray:
    """Rows of onehot96(daily) ++ onehot7(weekly), one per slot."""
    out = np.zeros((len(ids), EMBED_DIM), dtype=np.float64)
    for i, ts in enumerate(ids):
        out[i, ts.daily_id] = 1.0
        out[i, DAILY_SLOTS + ts.weekly_id] = 1.0
    return out


def window_embedding(slot_index: int, t_in: int, t_out: int,
                     start_weekday: int = 0,
                     start_daily_slot: int = 0) -> np.ndarray:
    """One-hot rows for a window's input and target slots combined."""
    ids = [slot_ids(slot_index + k, start_weekday, start_daily_slot)
           for k in range(t_in + t_out)]
    return build_embedding(ids)


class TemporalMLP(nn.Module):
    """Two FC layers projecting the one-hot rows to width d.

    relu follows both layers; `relu_first_only` drops the second one for
    sensitivity checks.
    """

    def __init__(self, d: int, d_hidden: int | None = None,
                 relu_first_only: bool = False):
        super().__init__()
        d_hidden = d if d_hidden is None else d_hidden
        self.fc1 = nn.Linear(EMBED_DIM, d_hidden).double()
        self.fc2 = nn.Linear(d_hidden, d).double()
        self.relu_first_only = relu_first_only

    def forward(self, e_raw: torch.Tensor, t_in: int):
        """(T+T', 103) one-hot rows -> (E1 (T, d), E2 (T', d)).

        A leading batch dimension is carried through unchanged.
        """
        if e_raw.shape[-1] != EMBED_DIM:
            raise ValueError(
                f"expected one-hot rows of width {EMBED_DIM}, "
                f"got {e_raw.shape[-1]}")
        h = torch.relu(self.fc1(e_raw))
        out = self.fc2(h)
        if not self.relu_first_only:
            out = torch.relu(out)
        return out[..., :t_in, :], out[..., t_in:, :]
