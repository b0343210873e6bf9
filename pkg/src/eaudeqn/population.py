"""Population members and the selection mechanics of adaptive pruning.

A Member is one online network: parameters, binary mask, optimizer state,
cumulated loss, sparsity, and a lineage id. A Population holds K members plus
the shared target snapshot and the champion index.

Selection happens in two phases at every selection event:

exploitation -- pick K source slots with repetition. Slot 0 is reserved for
the champion (lowest cumulated loss); every other slot runs one tournament:
draw M distinct members uniformly without replacement and keep the one with
the lowest cumulated loss.

exploration -- the first occurrence of each source moves in untouched;
every later occurrence is a duplicate: the source's parameters are copied,
a fresh (weakly higher) sparsity is sampled, the copy is magnitude-pruned and
hard-zeroed at the new mask, its optimizer is reset, and it starts a new
lineage. All cumulated losses are then reset to zero.

Dynamics note: duplicates sample their new sparsity starting from the target
that created the source's mask (Member.mask_target), not the realized
fraction. Targets are monotone along a lineage, which makes per-layer
round-half-up zero counts monotone too, so a lineage provably never
resurrects a pruned weight. Realized sparsity is what gets reported.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError
from .nncore import AdamState, NetworkParams, adam_step, reset_optimizer, td_loss_and_grad
from .pruning import (
    EauDeConfig,
    Mask,
    apply_mask,
    magnitude_mask,
    mask_of_ones,
    sample_sparsity,
    sparsity_of,
)
from .rng import RngStream

LOSS_FLOOR = 1e-12  # behavior sampling clamp; cumulated losses start at 0


@dataclass
class Member:
    """One online network plus its optimizer, loss account, and lineage."""

    params: NetworkParams
    mask: Mask
    optimizer: AdamState
    cumulated_loss: float
    sparsity: float
    lineage_id: int
    mask_target: float = 0.0
    # Per-member soft target, used by the actor-critic path only.
    target_params: NetworkParams | None = None
    target_mask: Mask | None = None


@dataclass
class Population:
    """K members, the shared target snapshot, and the champion index."""

    members: list[Member]
    target_params: NetworkParams | None
    target_mask: Mask | None
    champion_index: int
    next_lineage_id: int

    @property
    def k(self) -> int:
        return len(self.members)

    def losses(self) -> list[float]:
        return [m.cumulated_loss for m in self.members]


def fresh_member(params: NetworkParams, optimizer: AdamState, lineage_id: int, with_target: bool = False) -> Member:
    mask = mask_of_ones(params)
    return Member(
        params=params,
        mask=mask,
        optimizer=optimizer,
        cumulated_loss=0.0,
        sparsity=0.0,
        lineage_id=lineage_id,
        mask_target=0.0,
        target_params=params.copy() if with_target else None,
        target_mask=mask.copy() if with_target else None,
    )


def member_digest(member: Member) -> str:
    """Hash of params, mask, and optimizer; used for bit-exactness checks."""
    h = hashlib.sha256()
    for arr in member.params.weights + member.params.biases + member.mask.layers:
        h.update(arr.tobytes())
    for arr in member.optimizer.m.weights + member.optimizer.m.biases:
        h.update(arr.tobytes())
    for arr in member.optimizer.v.weights + member.optimizer.v.biases:
        h.update(arr.tobytes())
    h.update(member.optimizer.step_count.to_bytes(8, "little"))
    return h.hexdigest()


def member_gradient_step(member: Member, inputs, action_indices, targets) -> tuple[Member, float]:
    """One masked TD gradient step; returns the updated member and batch loss.

    The cumulated loss grows by the scalar batch loss; the mask is unchanged;
    weights are re-zeroed at masked positions so the member invariant
    (params exactly zero where masked) holds even when stale optimizer
    moments exist from before a mask change.
    """
    loss, grad = td_loss_and_grad(member.params, member.mask, inputs, action_indices, targets)
    if not np.isfinite(loss):
        from .errors import NonFiniteError

        raise NonFiniteError(f"non-finite batch loss on lineage {member.lineage_id}")
    new_params, new_opt = adam_step(member.params, grad, member.optimizer)
    new_params = apply_mask(new_params, member.mask)
    updated = replace(
        member,
        params=new_params,
        optimizer=new_opt,
        cumulated_loss=member.cumulated_loss + loss,
    )
    return updated, loss


def behavior_distribution(losses) -> np.ndarray:
    """Probabilities inversely proportional to the cumulated losses.

    Losses below the floor are clamped; if every loss is below the floor
    (start of training, right after a reset) the distribution is uniform.
    """
    arr = np.asarray(losses, dtype=np.float64)
    if arr.size < 1:
        raise ConfigError("need at least one loss")
    if np.all(arr < LOSS_FLOOR):
        return np.full(arr.size, 1.0 / arr.size)
    inv = 1.0 / np.maximum(arr, LOSS_FLOOR)
    return inv / inv.sum()


def sample_behavior_index(losses, rng: RngStream) -> int:
    return int(rng.choice(len(losses), p=behavior_distribution(losses)))


def select_target(losses) -> int:
    """Index of the minimal cumulated loss; ties break to the lowest index."""
    arr = np.asarray(losses, dtype=np.float64)
    if arr.size < 1:
        raise ConfigError("need at least one loss")
    return int(arr.argmin())


def exploitation(losses, champion_index: int, cfg: EauDeConfig, rng: RngStream) -> list[int]:
    """Select K source indices with repetition; slot 0 is the champion.

    Each remaining slot draws tournament_size distinct members uniformly
    without replacement and keeps the lowest cumulated loss (ties break to
    the lowest member index).
    """
    k, m = cfg.population_size, cfg.tournament_size
    if len(losses) != k:
        raise ConfigError(f"got {len(losses)} losses for population size {k}")
    if m > k:
        raise ConfigError("tournament size cannot exceed population size")
    arr = np.asarray(losses, dtype=np.float64)
    selection = [int(champion_index)]
    for _ in range(k - 1):
        entrants = np.sort(np.asarray(rng.choice(k, size=m, replace=False)))
        winner = entrants[int(arr[entrants].argmin())]
        selection.append(int(winner))
    return selection


@dataclass
class ExplorationRecord:
    slot: int
    source: int
    duplicated: bool
    sparsity: float
    source_sparsity: float
    lineage_id: int


def exploration(
    population: Population,
    selection: list[int],
    t: int,
    t_next: int,
    cfg: EauDeConfig,
    rng: RngStream,
) -> tuple[Population, list[ExplorationRecord]]:
    """Build the next population from the selected sources.

    First occurrences move in unchanged (params, mask, optimizer intact).
    Duplicates copy the source's params, sample a fresh sparsity (one
    independent draw each, frozen at the source's level once the horizon is
    reached), get magnitude-pruned and zeroed at the new mask, have their
    optimizer reset and (when present) their soft target reinitialized to the
    pruned copy, and start a fresh lineage. All cumulated losses end at zero.
    """
    members = population.members
    seen: set[int] = set()
    new_members: list[Member] = []
    records: list[ExplorationRecord] = []
    next_lineage = population.next_lineage_id
    for slot, source_idx in enumerate(selection):
        source = members[source_idx]
        if source_idx not in seen:
            seen.add(source_idx)
            moved = replace(source, cumulated_loss=0.0)
            new_members.append(moved)
            records.append(
                ExplorationRecord(slot, source_idx, False, moved.sparsity, source.sparsity, moved.lineage_id)
            )
            continue
        params = source.params.copy()
        if t >= cfg.t_final:
            new_target = source.mask_target  # schedule exhausted: freeze
        else:
            new_target = sample_sparsity(source.mask_target, t, t_next, cfg, rng)
        mask = magnitude_mask(params, new_target)
        params = apply_mask(params, mask)
        duplicate = Member(
            params=params,
            mask=mask,
            optimizer=reset_optimizer(source.optimizer),
            cumulated_loss=0.0,
            sparsity=sparsity_of(mask),
            lineage_id=next_lineage,
            mask_target=new_target,
            target_params=params.copy() if source.target_params is not None else None,
            target_mask=mask.copy() if source.target_mask is not None else None,
        )
        next_lineage += 1
        new_members.append(duplicate)
        records.append(
            ExplorationRecord(slot, source_idx, True, duplicate.sparsity, source.sparsity, duplicate.lineage_id)
        )
    new_population = Population(
        members=new_members,
        target_params=population.target_params,
        target_mask=population.target_mask,
        champion_index=population.champion_index,
        next_lineage_id=next_lineage,
    )
    return new_population, records
