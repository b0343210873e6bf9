"""Experiment orchestration: the training loops, logging, and resumable state.

One run is driven by an ExperimentConfig and a single 64-bit seed. Every
consumer of randomness owns a named RngStream, so the trajectory is
reproducible bit-for-bit, member updates can fan out over threads without
changing results, and a run resumed from a checkpoint continues exactly
where the uninterrupted run would have been.

Event ordering per environment step (value-based): interact, then one shared
gradient pass every gradient_period steps once the warmup is filled, then
scheduled pruning (period-triggered path), then the target-update block
(target selection, then exploitation, then exploration, then loss resets),
then evaluation, then logging. The actor-critic loop follows the same frame
with UTD critic passes plus one actor update per step and prune events every
prune_period steps.
"""

from __future__ import annotations

import hashlib
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .config import ExperimentConfig, config_digest, network_widths, validate_config
from .dqn import act_epsilon_greedy, distillqn_update, epsilon_at, td_targets, train_member
from .envs import Transition, make_env
from .errors import ConfigError, NonFiniteError
from .nncore import init_adam_state, init_network, mlp_layer_specs
from .population import (
    Population,
    exploitation,
    exploration,
    fresh_member,
    member_digest,
    sample_behavior_index,
    select_target,
)
from .pruning import Mask
from .replay import ReplayBuffer
from .rng import RngStream
from .sac import (
    GaussianPolicy,
    TwinCriticPopulation,
    critic_inputs,
    draw_action,
    eaudesac_prune_event,
    mean_action,
    polyprune_critic_member,
    sac_actor_update,
    sac_critic_targets,
    train_critic_member,
)

VALUE_STREAMS = ("env", "explore", "behavior", "replay", "selection", "eval")
SAC_STREAMS = ("env", "policy", "target", "actor", "replay", "selection", "eval")


class NumericAbortError(RuntimeError):
    """A non-finite loss appeared; carries the state for the checkpoint dump."""

    def __init__(self, cause: Exception, state: "TrainState", log: "RunLog"):
        super().__init__(f"numeric abort at step {state.step}: {cause}")
        self.cause = cause
        self.state = state
        self.log = log


@dataclass
class LogRecord:
    step: int
    wallclock_s: float
    episode_return: float
    eval_return: float
    champions: tuple[int, ...]
    behaviors: tuple[int, ...]
    sparsities: tuple[tuple[float, ...], ...]
    losses: tuple[tuple[float, ...], ...]


@dataclass
class RunLog:
    """Append-only run record plus the selection-event trace."""

    algorithm: str
    env: str
    seed: int
    population: int
    twin: bool
    records: list[LogRecord] = field(default_factory=list)
    events: list[dict] = field(default_factory=list)

    def header(self) -> list[str]:
        cols = ["step", "wallclock_s", "episode_return", "eval_return"]
        groups = ("c1_", "c2_") if self.twin else ("",)
        for prefix in groups:
            cols.append(f"{prefix}champion_index")
        for prefix in groups:
            cols.append(f"{prefix}behavior_index")
        for prefix in groups:
            cols.extend(f"{prefix}sparsity_{k + 1}" for k in range(self.population))
        for prefix in groups:
            cols.extend(f"{prefix}loss_{k + 1}" for k in range(self.population))
        return cols

    def to_csv(self) -> str:
        lines = [",".join(self.header())]
        for rec in self.records:
            cells = [str(rec.step), _fmt(rec.wallclock_s), _fmt(rec.episode_return), _fmt(rec.eval_return)]
            cells.extend(str(c) for c in rec.champions)
            cells.extend(str(b) for b in rec.behaviors)
            for group in rec.sparsities:
                cells.extend(_fmt(s) for s in group)
            for group in rec.losses:
                cells.extend(_fmt(v) for v in group)
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"


def _fmt(x: float) -> str:
    return repr(float(x))


def mask_digest(mask: Mask) -> str:
    h = hashlib.sha256()
    for layer in mask.layers:
        h.update(layer.tobytes())
    return h.hexdigest()


@dataclass
class TrainState:
    """Everything needed to continue a run exactly where it stopped."""

    config: ExperimentConfig
    step: int
    streams: dict[str, RngStream]
    buffer: ReplayBuffer
    env_state: np.ndarray
    obs: np.ndarray
    episode_return: float
    episode_len: int
    last_episode_return: float
    last_eval: float
    population: Population | None = None
    logged_champion: int = 0
    logged_behavior: int = 0
    policy: GaussianPolicy | None = None
    twin: TwinCriticPopulation | None = None
    logged_behaviors: tuple[int, int] = (0, 0)


def _make_streams(seed: int, names) -> dict[str, RngStream]:
    return {name: RngStream(seed, name) for name in names}


def init_state(config: ExperimentConfig) -> TrainState:
    validate_config(config)
    env = make_env(config.env)
    widths = network_widths(config)
    if config.is_sac:
        streams = _make_streams(config.seed, SAC_STREAMS)
        actor_params = init_network(
            mlp_layer_specs(widths["actor"]), RngStream(config.seed, "actor/init")
        )
        policy = GaussianPolicy(
            params=actor_params,
            mask=_ones_mask(actor_params),
            optimizer=init_adam_state(actor_params, config.learning_rate, config.adam_epsilon),
            action_dim=env.spec.action_space.dimension,
            action_low=env.spec.action_space.low,
            action_high=env.spec.action_space.high,
        )
        k = config.population_size
        sides = []
        for i in range(2):
            members = []
            for j in range(k):
                params = init_network(
                    mlp_layer_specs(widths["critic"]),
                    RngStream(config.seed, f"critic/{i}/member/{j}/init"),
                )
                opt = init_adam_state(params, config.learning_rate, config.adam_epsilon)
                members.append(fresh_member(params, opt, lineage_id=j, with_target=True))
            sides.append(
                Population(members, None, None, champion_index=0, next_lineage_id=k)
            )
        twin = TwinCriticPopulation(
            sides=(sides[0], sides[1]),
            tau=config.tau,
            alpha=config.alpha,
            prune_period=config.prune_period,
        )
        population = None
    else:
        streams = _make_streams(config.seed, VALUE_STREAMS)
        k = config.population_size
        members = []
        for j in range(k):
            params = init_network(
                mlp_layer_specs(widths["q"]), RngStream(config.seed, f"member/{j}/init")
            )
            opt = init_adam_state(params, config.learning_rate, config.adam_epsilon)
            members.append(fresh_member(params, opt, lineage_id=j))
        champion = members[0]
        population = Population(
            members=members,
            target_params=champion.params.copy(),
            target_mask=champion.mask.copy(),
            champion_index=0,
            next_lineage_id=k,
        )
        twin = None
        policy = None
    env_state = env.reset(streams["env"])
    return TrainState(
        config=config,
        step=0,
        streams=streams,
        buffer=ReplayBuffer(config.buffer_capacity, env.spec.observation_width, env.spec.action_space),
        env_state=env_state,
        obs=env.observe(env_state),
        episode_return=0.0,
        episode_len=0,
        last_episode_return=float("nan"),
        last_eval=float("nan"),
        population=population,
        policy=policy,
        twin=twin,
    )


def _ones_mask(params):
    from .pruning import mask_of_ones

    return mask_of_ones(params)


def evaluate_policy(agent, env, episodes: int, rng: RngStream) -> float:
    """Mean raw (undiscounted) return over greedy or mean-action rollouts."""
    if episodes < 1:
        raise ConfigError("episodes must be >= 1")
    total = 0.0
    for _ in range(episodes):
        state = env.reset(rng)
        obs = env.observe(state)
        ep_return = 0.0
        for _ in range(env.spec.horizon):
            if isinstance(agent, GaussianPolicy):
                action = mean_action(agent, obs)
            else:
                action = act_epsilon_greedy(agent, obs, 0.0, rng)
            state, reward, done = env.step(state, action, rng)
            obs = env.observe(state)
            ep_return += reward
            if done:
                break
        total += ep_return
    return total / episodes


def run_training(
    config: ExperimentConfig,
    *,
    resume: TrainState | None = None,
    until_step: int | None = None,
    threads: int = 1,
    clock=None,
) -> tuple[RunLog, TrainState]:
    """Execute (or continue) one run; returns the log and the final state.

    `clock` supplies the wallclock_s column (default: time.perf_counter);
    tests inject a deterministic clock so CSV comparisons are byte-exact.
    On a non-finite loss the run raises NumericAbortError carrying the state.
    """
    validate_config(config)
    if resume is not None:
        if config_digest(resume.config) != config_digest(config):
            from .errors import CheckpointError

            raise CheckpointError("checkpoint config digest does not match this config")
        state = resume
    else:
        state = init_state(config)
    stop = config.total_steps if until_step is None else min(until_step, config.total_steps)
    log = RunLog(
        algorithm=config.algorithm,
        env=config.env,
        seed=config.seed,
        population=config.population_size,
        twin=config.is_sac,
    )
    clock = clock if clock is not None else time.perf_counter
    t0 = clock()
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        if config.is_sac:
            _run_sac(config, state, log, stop, pool, clock, t0)
        else:
            _run_value_based(config, state, log, stop, pool, clock, t0)
    except NonFiniteError as err:
        raise NumericAbortError(err, state, log) from err
    finally:
        if pool is not None:
            pool.shutdown(wait=True)
    return log, state


def _update_all(members, update_fn, pool):
    """Apply an independent per-member update, optionally across threads.

    Results are committed in member order, so scheduling cannot change the
    outcome; members never share mutable state or random streams.
    """
    if pool is None:
        return [update_fn(m) for m in members]
    return list(pool.map(update_fn, members))


# ----------------------------------------------------------------------------
# value-based loop (dqn, polyprune_dqn, eaude_dqn)
# ----------------------------------------------------------------------------


def _run_value_based(config, state, log, stop, pool, clock, t0):
    env = make_env(config.env)
    streams = state.streams
    pop = state.population
    is_eaude = config.eaude is not None
    pp = config.polyprune

    while state.step < stop:
        t = state.step + 1
        state.step = t

        # interact
        if is_eaude:
            bidx = sample_behavior_index(pop.losses(), streams["behavior"])
        else:
            bidx = 0
        state.logged_behavior = bidx
        eps = epsilon_at(t, config.epsilon_start, config.epsilon_end, config.epsilon_decay_steps)
        action = act_epsilon_greedy(pop.members[bidx], state.obs, eps, streams["explore"])
        next_state, reward, done = env.step(state.env_state, action, streams["env"])
        next_obs = env.observe(next_state)
        state.buffer.push(Transition(state.obs, action, reward, next_obs, done))
        state.episode_return += reward
        state.episode_len += 1
        if done or state.episode_len >= env.spec.horizon:
            state.last_episode_return = state.episode_return
            state.episode_return = 0.0
            state.episode_len = 0
            state.env_state = env.reset(streams["env"])
            state.obs = env.observe(state.env_state)
        else:
            state.env_state = next_state
            state.obs = next_obs

        # shared-target gradient pass over all members
        if t > config.warmup and t % config.gradient_period == 0:
            batch = state.buffer.sample_batch(config.batch_size, streams["replay"])
            targets = td_targets(pop.target_params, pop.target_mask, batch, config.discount)
            pop.members = [m for m, _ in _update_all(pop.members, lambda m: train_member(m, batch, targets), pool)]

        event = False
        # target-update block
        if t % config.target_period == 0:
            event = True
            psi = select_target(pop.losses()) if is_eaude else 0
            pop.target_params = pop.members[psi].params.copy()
            pop.target_mask = pop.members[psi].mask.copy()
            state.logged_champion = psi
            log.events.append(
                {
                    "step": t,
                    "kind": "target_update",
                    "champion": psi,
                    "member_digests": [member_digest(m) for m in pop.members],
                }
            )
            if pp is not None and pp.sync_to_target_updates:
                _prune_online(pop, pp, t, log)
            if is_eaude:
                selection = exploitation(pop.losses(), psi, config.eaude, streams["selection"])
                log.events.append({"step": t, "kind": "exploitation", "selection": selection})
                pre_digest = member_digest(pop.members[psi])
                t_next = min(t + config.target_period, config.eaude.t_final)
                pop, records = exploration(pop, selection, t, t_next, config.eaude, streams["selection"])
                pop.champion_index = 0  # the champion occupies slot 0 after the event
                state.population = pop
                log.events.append(
                    {
                        "step": t,
                        "kind": "exploration",
                        "records": [asdict(r) for r in records],
                        "champion_digest_pre": pre_digest,
                        "slot0_digest_post": member_digest(pop.members[0]),
                    }
                )
            else:
                # monitoring losses mirror the population reset for comparability
                pop.members = [replace(m, cumulated_loss=0.0) for m in pop.members]
            log.events.append({"step": t, "kind": "loss_reset"})

        # period-triggered pruning; fires after any coinciding target copy so
        # that a period synchronized with the target period is the same
        # algorithm as the target-synced path
        if pp is not None and not pp.sync_to_target_updates and t % pp.pruning_period == 0:
            event = True
            _prune_online(pop, pp, t, log)

        if t % config.eval_period == 0:
            champion_member = pop.members[pop.champion_index]
            state.last_eval = evaluate_policy(champion_member, env, config.eval_episodes, streams["eval"])

        if t % config.log_period == 0 or event:
            _append_value_record(log, state, pop, clock() - t0)


def _prune_online(pop: Population, pp, t: int, log: RunLog) -> None:
    member = distillqn_update(pop.members[0], pp, t)
    pop.members[0] = member
    log.events.append(
        {
            "step": t,
            "kind": "prune",
            "target": member.mask_target,
            "realized": member.sparsity,
            "mask_digest": mask_digest(member.mask),
        }
    )


def _append_value_record(log: RunLog, state: TrainState, pop: Population, wallclock: float) -> None:
    log.records.append(
        LogRecord(
            step=state.step,
            wallclock_s=wallclock,
            episode_return=state.last_episode_return,
            eval_return=state.last_eval,
            champions=(state.logged_champion,),
            behaviors=(state.logged_behavior,),
            sparsities=(tuple(m.sparsity for m in pop.members),),
            losses=(tuple(m.cumulated_loss for m in pop.members),),
        )
    )


# ----------------------------------------------------------------------------
# actor-critic loop (sac, polyprune_sac, eaude_sac)
# ----------------------------------------------------------------------------


def _run_sac(config, state, log, stop, pool, clock, t0):
    env = make_env(config.env)
    streams = state.streams
    is_eaude = config.eaude is not None
    pp = config.polyprune

    while state.step < stop:
        t = state.step + 1
        state.step = t

        # interact with the stochastic policy
        action, _ = draw_action(state.policy, state.obs, streams["policy"])
        next_state, reward, done = env.step(state.env_state, action, streams["env"])
        next_obs = env.observe(next_state)
        state.buffer.push(Transition(state.obs, action, reward, next_obs, done))
        state.episode_return += reward
        state.episode_len += 1
        if done or state.episode_len >= env.spec.horizon:
            state.last_episode_return = state.episode_return
            state.episode_return = 0.0
            state.episode_len = 0
            state.env_state = env.reset(streams["env"])
            state.obs = env.observe(state.env_state)
        else:
            state.env_state = next_state
            state.obs = next_obs

        if t > config.warmup:
            batch = None
            for _ in range(config.utd):
                batch = state.buffer.sample_batch(config.batch_size, streams["replay"])
                targets = sac_critic_targets(state.twin, state.policy, batch, config.discount, streams["target"])
                inputs = critic_inputs(batch.states, batch.actions)
                for side in state.twin.sides:
                    side.members = [
                        m
                        for m, _ in _update_all(
                            side.members,
                            lambda m: train_critic_member(m, inputs, targets, config.tau),
                            pool,
                        )
                    ]
                for side in state.twin.sides:
                    side.champion_index = select_target(side.losses())
            state.policy, behaviors = sac_actor_update(
                state.policy, state.twin, batch, config.alpha, streams["actor"]
            )
            state.logged_behaviors = behaviors

        event = False
        if pp is not None and t % pp.pruning_period == 0:
            event = True
            for i, side in enumerate(state.twin.sides):
                side.members = [polyprune_critic_member(m, pp, t) for m in side.members]
                log.events.append(
                    {
                        "step": t,
                        "kind": "prune",
                        "critic": i,
                        "target": side.members[0].mask_target,
                        "realized": side.members[0].sparsity,
                        "mask_digest": mask_digest(side.members[0].mask),
                    }
                )
        if is_eaude and t % config.prune_period == 0:
            event = True
            pre_digests = [
                member_digest(side.members[select_target(side.losses())]) for side in state.twin.sides
            ]
            t_next = min(t + config.prune_period, config.eaude.t_final)
            state.twin, records = eaudesac_prune_event(
                state.twin, t, t_next, config.eaude, streams["selection"]
            )
            for record, pre in zip(records, pre_digests):
                log.events.append(
                    {
                        "step": t,
                        "kind": "sac_prune",
                        "critic": record.critic,
                        "selection": record.selection,
                        "records": [asdict(r) for r in record.exploration],
                        "champion_digest_pre": pre,
                        "slot0_digest_post": member_digest(
                            state.twin.sides[record.critic].members[0]
                        ),
                    }
                )

        if t % config.eval_period == 0:
            state.last_eval = evaluate_policy(state.policy, env, config.eval_episodes, streams["eval"])

        if t % config.log_period == 0 or event:
            _append_sac_record(log, state, clock() - t0)


def _append_sac_record(log: RunLog, state: TrainState, wallclock: float) -> None:
    sides = state.twin.sides
    log.records.append(
        LogRecord(
            step=state.step,
            wallclock_s=wallclock,
            episode_return=state.last_episode_return,
            eval_return=state.last_eval,
            champions=(sides[0].champion_index, sides[1].champion_index),
            behaviors=tuple(state.logged_behaviors),
            sparsities=tuple(tuple(m.sparsity for m in side.members) for side in sides),
            losses=tuple(tuple(m.cumulated_loss for m in side.members) for side in sides),
        )
    )
