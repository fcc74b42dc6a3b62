"""Two-agent recurrent Q-learning with a state-conditioned monotone mixer.

Each agent (link selector, UAV pilot) runs feature extractor -> GRU -> Q head
over its own observation stream. A mixing network combines the two chosen-
action Q values into Q_tot; its weights come from hypernetworks fed with the
global state and passed through absolute value, which makes Q_tot monotone in
each agent's Q. Training is episode-replay TD with target networks.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Literal, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from . import nnkit as nk
from .env import (
    ActionPair,
    EnvConfig,
    HandoverEnv,
    MS_ACTION_COUNT,
    Observation,
    SlotRecord,
    SlotSnapshot,
    UAV_ACTION_COUNT,
    unpack_detections,
)
from .nnkit import Adam, Dense, GruCell, ParamStore, ResidualExtractor, Tensor
from .perception import (
    encode_size_channels,
    gaussian_map_from_rows,
    occupancy_map_from_rows,
)
from .rng import child_rng

Variant = Literal["vision", "location"]

# Net-input conditioning scales (not part of the observation semantics).
F_SCALE = 1.0 / 255.0
G_SCALE = 100.0


class NetConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    gru_hidden: int = 64
    mixing_hidden: int = 32
    trunk_channels: int = 8
    blocks: int = 2
    dtype: Literal["float32", "float64"] = "float32"

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64


class TrainConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    gamma: float = 0.99
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_steps: int = 50_000
    buffer_episodes: int = 2000
    batch_episodes: int = 32
    target_sync_interval: int = 200
    lr: float = 5e-4
    train_interval: int = 1          # episodes between gradient steps
    checkpoint_interval: int = 0     # episodes between checkpoints; 0 = final only
    nets: NetConfig = NetConfig()

    @model_validator(mode="after")
    def _check(self) -> "TrainConfig":
        if not (0.0 <= self.gamma < 1.0):
            raise ValueError("gamma must be in [0, 1)")
        for e in (self.eps_start, self.eps_end):
            if not (0.0 <= e <= 1.0):
                raise ValueError("epsilon must be in [0, 1]")
        if self.eps_end > self.eps_start:
            raise ValueError("eps_end must not exceed eps_start")
        if self.batch_episodes < 1 or self.buffer_episodes < self.batch_episodes:
            raise ValueError("buffer must hold at least one batch")
        return self


def epsilon_at(cfg: TrainConfig, env_steps: int) -> float:
    """Linear decay from eps_start to the eps_end floor over eps_decay_steps."""
    if cfg.eps_decay_steps <= 0 or env_steps >= cfg.eps_decay_steps:
        return cfg.eps_end
    frac = env_steps / cfg.eps_decay_steps
    return cfg.eps_start + (cfg.eps_end - cfg.eps_start) * frac


@dataclass
class EpisodeRecord:
    """Compact replayable episode: per-slot snapshots plus actions/rewards."""

    veh: list[np.ndarray]      # per slot (n, 8)
    ms: np.ndarray             # (T, 6)
    wu: np.ndarray             # (T, 2)
    dets: list[np.ndarray]     # per slot (m, 27)
    actions: np.ndarray        # (T, 2) int64 [a_m, a_u]
    rewards: np.ndarray        # (T,)

    @property
    def slots(self) -> int:
        return len(self.rewards)


class Featurizer:
    """Turns snapshots into net inputs; one code path for acting and replay."""

    def __init__(self, cfg: EnvConfig, variant: Variant, dtype):
        self.variant = variant
        self.dtype = dtype
        self.grid = cfg.perception.grid
        self.bounds = cfg.perception.bounds
        self.intr = cfg.perception.image.intrinsics()
        road = cfg.scenario.road
        self.pos_scale = np.array([road.length, max(road.width / 2.0, 1e-9)])
        self.ms_map_shape = ((12, self.intr.height, self.intr.width)
                             if variant == "vision" else None)
        self.uav_map_shape = ((4, self.grid.rows, self.grid.cols) if variant == "vision"
                              else (2, self.grid.rows, self.grid.cols))
        self.state_map_shape = (4, self.grid.rows, self.grid.cols)

    def _norm_pos(self, xy: np.ndarray) -> np.ndarray:
        return (np.asarray(xy, dtype=np.float64) / self.pos_scale).astype(self.dtype)

    def _g_map(self, snap: SlotSnapshot) -> np.ndarray:
        veh, ms = snap.vehicles, snap.ms
        ch = np.concatenate([veh[:, 0], [0.0]])
        xs = np.concatenate([veh[:, 1], [ms[0]]])
        ys = np.concatenate([veh[:, 2], [ms[1]]])
        ls = np.concatenate([veh[:, 5], [ms[3]]])
        ws = np.concatenate([veh[:, 6], [ms[4]]])
        return gaussian_map_from_rows(ch, xs, ys, ls, ws, self.grid, dtype=self.dtype)

    def _occ_map(self, snap: SlotSnapshot) -> np.ndarray:
        veh, ms = snap.vehicles, snap.ms
        is_ms = np.concatenate([np.zeros(len(veh), dtype=bool), [True]])
        xs = np.concatenate([veh[:, 1], [ms[0]]])
        ys = np.concatenate([veh[:, 2], [ms[1]]])
        return occupancy_map_from_rows(is_ms, xs, ys, self.grid, dtype=self.dtype)

    def encode(self, snap: SlotSnapshot) -> dict[str, np.ndarray]:
        """Per-slot arrays: ms_map (optional), ms_pos, uav_map, uav_pos, state_map."""
        g = self._g_map(snap)
        out = {
            "ms_pos": self._norm_pos(snap.ms[:2]),
            "uav_pos": self._norm_pos(snap.uav_pos),
            "state_map": g * G_SCALE,
        }
        if self.variant == "vision":
            f = encode_size_channels(unpack_detections(snap.detections), self.bounds,
                                     self.intr, dtype=self.dtype)
            out["ms_map"] = f * F_SCALE
            out["uav_map"] = g * G_SCALE
        else:
            out["ms_map"] = None
            out["uav_map"] = self._occ_map(snap)
        return out

    def encode_batch(self, snaps: Sequence[SlotSnapshot]) -> dict[str, Optional[np.ndarray]]:
        encs = [self.encode(s) for s in snaps]
        batch: dict[str, Optional[np.ndarray]] = {}
        for key in ("ms_pos", "uav_pos", "state_map", "uav_map"):
            batch[key] = np.stack([e[key] for e in encs])
        batch["ms_map"] = (np.stack([e["ms_map"] for e in encs])
                           if encs[0]["ms_map"] is not None else None)
        return batch

    def encode_from_obs(self, obs: Observation, snap: SlotSnapshot) -> dict[str, np.ndarray]:
        """Same arrays as encode(), but reusing the maps the environment has
        already rendered for this slot (rollout fast path)."""
        g_scaled = (obs.uav_map * G_SCALE).astype(self.dtype, copy=False)
        out = {
            "ms_pos": self._norm_pos(snap.ms[:2]),
            "uav_pos": self._norm_pos(snap.uav_pos),
            "state_map": g_scaled,
        }
        if self.variant == "vision":
            out["ms_map"] = (obs.ms_map * F_SCALE).astype(self.dtype, copy=False)
            out["uav_map"] = g_scaled
        else:
            out["ms_map"] = None
            out["uav_map"] = self._occ_map(snap)
        return out


def _one_hot(indices: np.ndarray, n: int, dtype) -> np.ndarray:
    out = np.zeros((len(indices), n), dtype=dtype)
    out[np.arange(len(indices)), indices] = 1.0
    return out


class VqmixNets:
    """All parameters for one copy (online or target) of the networks."""

    def __init__(self, feat: Featurizer, net_cfg: NetConfig, rng: np.random.Generator):
        self.cfg = net_cfg
        self.feat = feat
        dtype = net_cfg.np_dtype
        self.store = ParamStore(dtype=dtype)
        tc, nb = net_cfg.trunk_channels, net_cfg.blocks

        self.ms_ex = (ResidualExtractor(self.store, "ms/ex", feat.ms_map_shape, rng,
                                        trunk_channels=tc, blocks=nb)
                      if feat.ms_map_shape else None)
        ms_in = (self.ms_ex.out_dim if self.ms_ex else 0) + 2 + MS_ACTION_COUNT
        self.ms_gru = GruCell(self.store, "ms/gru", ms_in, net_cfg.gru_hidden, rng)
        self.ms_head = Dense(self.store, "ms/head", net_cfg.gru_hidden, MS_ACTION_COUNT, rng)

        self.uav_ex = ResidualExtractor(self.store, "uav/ex", feat.uav_map_shape, rng,
                                        trunk_channels=tc, blocks=nb)
        uav_in = self.uav_ex.out_dim + 2 + UAV_ACTION_COUNT
        self.uav_gru = GruCell(self.store, "uav/gru", uav_in, net_cfg.gru_hidden, rng)
        self.uav_head = Dense(self.store, "uav/head", net_cfg.gru_hidden, UAV_ACTION_COUNT, rng)

        self.state_ex = ResidualExtractor(self.store, "hyper/ex", feat.state_map_shape, rng,
                                          trunk_channels=tc, blocks=nb)
        sdim = self.state_ex.out_dim + 2
        mh = net_cfg.mixing_hidden
        self.hyper_w1 = Dense(self.store, "hyper/w1", sdim, 2 * mh, rng)
        self.hyper_b1 = Dense(self.store, "hyper/b1", sdim, mh, rng)
        self.hyper_w2 = Dense(self.store, "hyper/w2", sdim, mh, rng)
        self.hyper_b2 = Dense(self.store, "hyper/b2", sdim, 1, rng)

    # -- forward pieces ----------------------------------------------------

    def agent_step(self, which: str, maps: Optional[np.ndarray], pos: np.ndarray,
                   prev_onehot: np.ndarray, h: Tensor) -> tuple[Tensor, Tensor]:
        """One GRU step for a batch; returns (q_values (B,A), new hidden)."""
        parts = []
        if which == "ms":
            ex, gru, head = self.ms_ex, self.ms_gru, self.ms_head
        else:
            ex, gru, head = self.uav_ex, self.uav_gru, self.uav_head
        if ex is not None:
            parts.append(ex(Tensor(maps)))
        parts.append(Tensor(np.concatenate([pos, prev_onehot], axis=1)))
        x = nk.concat(parts, axis=1) if len(parts) > 1 else parts[0]
        h_new = gru(x, h)
        return head(h_new), h_new

    def q_tot(self, q1: Tensor, q2: Tensor, state_map: np.ndarray,
              state_vec: np.ndarray) -> Tensor:
        """Monotone mixer: Q_tot = |w2|' elu(|W1| q + b1) + b2, hypernet-generated."""
        b = q1.shape[0]
        mh = self.cfg.mixing_hidden
        sfeat = nk.concat([self.state_ex(Tensor(state_map)), Tensor(state_vec)], axis=1)
        w1 = nk.reshape(nk.absval(self.hyper_w1(sfeat)), (b, 2, mh))
        b1 = self.hyper_b1(sfeat)
        w2 = nk.absval(self.hyper_w2(sfeat))
        b2 = nk.reshape(self.hyper_b2(sfeat), (b,))
        q = nk.concat([nk.reshape(q1, (b, 1)), nk.reshape(q2, (b, 1))], axis=1)
        hidden = nk.elu(nk.tsum(nk.reshape(q, (b, 2, 1)) * w1, axis=1) + b1)
        return nk.tsum(hidden * w2, axis=1) + b2

    def zero_hidden(self, batch: int) -> tuple[Tensor, Tensor]:
        dt = self.cfg.np_dtype
        return self.ms_gru.zero_state(batch, dt), self.uav_gru.zero_state(batch, dt)


class ReplayBuffer:
    def __init__(self, capacity: int):
        self._buf: deque[EpisodeRecord] = deque(maxlen=capacity)

    def push(self, ep: EpisodeRecord) -> None:
        self._buf.append(ep)

    def __len__(self) -> int:
        return len(self._buf)

    def sample(self, n: int, rng: np.random.Generator) -> list[EpisodeRecord]:
        if len(self._buf) < n:
            raise ValueError("not enough episodes buffered")
        idx = rng.choice(len(self._buf), size=n, replace=False)
        return [self._buf[int(i)] for i in idx]


class VqmixLearner:
    """Owns online/target nets, the replay buffer, and the training loop state."""

    def __init__(self, env_cfg: EnvConfig, cfg: TrainConfig, variant: Variant, seed: int):
        self.env_cfg = env_cfg
        self.cfg = cfg
        self.variant = variant
        self.seed = seed
        dtype = cfg.nets.np_dtype
        self.feat = Featurizer(env_cfg, variant, dtype)
        init_rng = child_rng(seed, "net-init")
        self.online = VqmixNets(self.feat, cfg.nets, init_rng)
        self.target = VqmixNets(self.feat, cfg.nets, child_rng(seed, "net-init-target"))
        self.target.store.copy_from(self.online.store)
        self.opt = Adam(self.online.store, lr=cfg.lr)
        self.buffer = ReplayBuffer(cfg.buffer_episodes)
        self.explore_rng = child_rng(seed, "explore")
        self.replay_rng = child_rng(seed, "replay")
        self.env_steps = 0
        self.train_steps = 0
        self.episodes = 0
        self._last_targets: Optional[np.ndarray] = None

    @property
    def epsilon(self) -> float:
        return epsilon_at(self.cfg, self.env_steps)

    # -- acting --------------------------------------------------------------

    def act(self, enc: dict[str, np.ndarray], hidden: tuple[Tensor, Tensor],
            prev: tuple[int, int], eps: float,
            rng: Optional[np.random.Generator] = None
            ) -> tuple[ActionPair, tuple[Tensor, Tensor], np.ndarray, np.ndarray]:
        """Epsilon-greedy joint action from one encoded observation."""
        rng = rng if rng is not None else self.explore_rng
        dt = self.cfg.nets.np_dtype
        prev_m = _one_hot(np.array([prev[0]]), MS_ACTION_COUNT, dt)
        prev_u = _one_hot(np.array([prev[1]]), UAV_ACTION_COUNT, dt)
        with nk.no_grad():
            q_ms, h_ms = self.online.agent_step(
                "ms", None if enc["ms_map"] is None else enc["ms_map"][None],
                enc["ms_pos"][None], prev_m, hidden[0])
            q_uav, h_uav = self.online.agent_step(
                "uav", enc["uav_map"][None], enc["uav_pos"][None], prev_u, hidden[1])
        qm = q_ms.data[0]
        qu = q_uav.data[0]
        a_m = int(rng.integers(MS_ACTION_COUNT)) if rng.random() < eps else int(np.argmax(qm))
        a_u = int(rng.integers(UAV_ACTION_COUNT)) if rng.random() < eps else int(np.argmax(qu))
        return ActionPair(a_m=a_m, a_u=a_u), (h_ms, h_uav), qm, qu

    def run_episode(self, env: HandoverEnv, episode_seed: int, explore: bool = True,
                    store: bool = True) -> tuple[list[SlotRecord], EpisodeRecord]:
        """Roll one episode; optionally push it to the replay buffer."""
        obs, _ = env.reset(episode_seed)
        hidden = self.online.zero_hidden(1)
        prev = (0, 0)
        veh, ms, wu, dets, acts, rews = [], [], [], [], [], []
        records: list[SlotRecord] = []
        while not env.done:
            snap = env.snapshot
            enc = self.feat.encode_from_obs(obs, snap)
            eps = self.epsilon if explore else 0.0
            action, hidden, _, _ = self.act(enc, hidden, prev, eps)
            obs, _, reward, _, rec = env.step(action)
            if explore:
                self.env_steps += 1
            records.append(rec)
            veh.append(snap.vehicles)
            ms.append(snap.ms)
            wu.append(snap.uav_pos)
            dets.append(snap.detections)
            acts.append([action.a_m, action.a_u])
            rews.append(reward)
            prev = (action.a_m, action.a_u)
        ep = EpisodeRecord(
            veh=veh, ms=np.array(ms), wu=np.array(wu), dets=dets,
            actions=np.array(acts, dtype=np.int64), rewards=np.array(rews, dtype=np.float64),
        )
        if store:
            self.buffer.push(ep)
            self.episodes += 1
        return records, ep

    # -- training --------------------------------------------------------------

    def _batch_slot_enc(self, eps_list: list[EpisodeRecord], t: int) -> dict[str, np.ndarray]:
        snaps = [
            SlotSnapshot(vehicles=ep.veh[t], ms=ep.ms[t], uav_pos=ep.wu[t],
                         detections=ep.dets[t])
            for ep in eps_list
        ]
        return self.feat.encode_batch(snaps)

    def _chunked_features(self, ex, maps_by_slot: list[np.ndarray], b: int,
                          taped: bool, chunk_slots: int = 40) -> list:
        """Extractor features for every slot, with conv batches spanning
        several slots (the extractors are feedforward; only the GRU is
        recurrent). Returns per-slot (B, F) tensors."""
        horizon = len(maps_by_slot)
        out: list[Tensor] = []
        for c0 in range(0, horizon, chunk_slots):
            chunk = maps_by_slot[c0:c0 + chunk_slots]
            stacked = np.concatenate(chunk, axis=0)
            if taped:
                feats = ex(Tensor(stacked))
            else:
                with nk.no_grad():
                    feats = ex(Tensor(stacked))
            for i in range(len(chunk)):
                out.append(nk.narrow0(feats, i * b, b))
        return out

    def td_train_step(self, batch: Optional[list[EpisodeRecord]] = None,
                      update: bool = True) -> float:
        """One TD step over a batch of full episodes; returns the loss.

        With update=False the loss is evaluated without touching parameters,
        counters, or the target nets (for loss inspection on a fixed batch).
        """
        cfg = self.cfg
        if batch is None:
            batch = self.buffer.sample(cfg.batch_episodes, self.replay_rng)
        horizon = batch[0].slots
        if any(ep.slots != horizon for ep in batch):
            raise ValueError("episodes in one batch must share a horizon")
        b = len(batch)
        dt = cfg.nets.np_dtype

        actions = np.stack([ep.actions for ep in batch])   # (B, T, 2)
        rewards = np.stack([ep.rewards for ep in batch])   # (B, T)
        encs = [self._batch_slot_enc(batch, t) for t in range(horizon)]

        prev_m = [np.zeros((b, MS_ACTION_COUNT), dtype=dt)]
        prev_u = [np.zeros((b, UAV_ACTION_COUNT), dtype=dt)]
        for t in range(1, horizon):
            prev_m.append(_one_hot(actions[:, t - 1, 0], MS_ACTION_COUNT, dt))
            prev_u.append(_one_hot(actions[:, t - 1, 1], UAV_ACTION_COUNT, dt))

        self.online.store.zero_grads()

        ms_maps = [e["ms_map"] for e in encs]
        uav_maps = [e["uav_map"] for e in encs]
        state_maps = [e["state_map"] for e in encs]

        def unroll(nets: VqmixNets, taped: bool) -> tuple[list[Tensor], list[Tensor]]:
            """Full-episode GRU unroll; returns per-slot (q_ms, q_uav)."""
            ms_feats = (self._chunked_features(nets.ms_ex, ms_maps, b, taped)
                        if nets.ms_ex is not None else None)
            uav_feats = self._chunked_features(nets.uav_ex, uav_maps, b, taped)
            h_ms, h_uav = nets.zero_hidden(b)
            q_ms_all, q_uav_all = [], []
            for t in range(horizon):
                ms_vec = Tensor(np.concatenate([encs[t]["ms_pos"], prev_m[t]], axis=1))
                parts = ([ms_feats[t], ms_vec] if ms_feats is not None else [ms_vec])
                x_ms = nk.concat(parts, axis=1) if len(parts) > 1 else parts[0]
                h_ms = nets.ms_gru(x_ms, h_ms)
                q_ms_all.append(nets.ms_head(h_ms))
                uav_vec = Tensor(np.concatenate([encs[t]["uav_pos"], prev_u[t]], axis=1))
                x_uav = nk.concat([uav_feats[t], uav_vec], axis=1)
                h_uav = nets.uav_gru(x_uav, h_uav)
                q_uav_all.append(nets.uav_head(h_uav))
            return q_ms_all, q_uav_all

        def mix_all(nets: VqmixNets, q1_all: Tensor, q2_all: Tensor) -> Tensor:
            """Q_tot for every (slot, episode) at once; rows are slot-major."""
            n = horizon * b
            smap = np.concatenate(state_maps, axis=0)
            svec = np.concatenate([e["uav_pos"] for e in encs], axis=0)
            sfeat = nk.concat([nets.state_ex(Tensor(smap)), Tensor(svec)], axis=1)
            mh = nets.cfg.mixing_hidden
            w1 = nk.reshape(nk.absval(nets.hyper_w1(sfeat)), (n, 2, mh))
            b1 = nets.hyper_b1(sfeat)
            w2 = nk.absval(nets.hyper_w2(sfeat))
            b2 = nk.reshape(nets.hyper_b2(sfeat), (n,))
            q = nk.concat([nk.reshape(q1_all, (n, 1)), nk.reshape(q2_all, (n, 1))], axis=1)
            hidden = nk.elu(nk.tsum(nk.reshape(q, (n, 2, 1)) * w1, axis=1) + b1)
            return nk.tsum(hidden * w2, axis=1) + b2

        with nk.no_grad():
            q_ms_t, q_uav_t = unroll(self.target, taped=False)
            best_ms = Tensor(np.concatenate([q.data.max(axis=1) for q in q_ms_t]))
            best_uav = Tensor(np.concatenate([q.data.max(axis=1) for q in q_uav_t]))
            q_tot_target = mix_all(self.target, best_ms, best_uav).data.astype(np.float64)
        q_tot_target = q_tot_target.reshape(horizon, b).T          # (B, T)

        q_ms_on, q_uav_on = unroll(self.online, taped=True)
        sel_m = Tensor(np.concatenate([_one_hot(actions[:, t, 0], MS_ACTION_COUNT, dt)
                                       for t in range(horizon)]))
        sel_u = Tensor(np.concatenate([_one_hot(actions[:, t, 1], UAV_ACTION_COUNT, dt)
                                       for t in range(horizon)]))
        q1_all = nk.tsum(nk.concat(q_ms_on, axis=0) * sel_m, axis=1)
        q2_all = nk.tsum(nk.concat(q_uav_on, axis=0) * sel_u, axis=1)
        q_tot_online = mix_all(self.online, q1_all, q2_all)        # (T*B,) slot-major

        y = rewards.copy()
        y[:, :-1] += cfg.gamma * q_tot_target[:, 1:]
        self._last_targets = y

        err = q_tot_online - Tensor(y.T.reshape(-1).astype(dt))
        loss = nk.tmean(err * err)
        if not update:
            return float(loss.data)
        loss.backward()
        self.opt.step()
        self.train_steps += 1
        if cfg.target_sync_interval > 0 and self.train_steps % cfg.target_sync_interval == 0:
            self.sync_targets()
        return float(loss.data)

    def maybe_train(self) -> Optional[float]:
        """Train when the buffer is warm and the episode cadence says so."""
        if len(self.buffer) < self.cfg.batch_episodes:
            return None
        if self.cfg.train_interval > 1 and self.episodes % self.cfg.train_interval != 0:
            return None
        return self.td_train_step()

    def sync_targets(self) -> None:
        self.target.store.copy_from(self.online.store)

    # -- persistence -------------------------------------------------------------

    def checkpoint_arrays(self) -> dict[str, np.ndarray]:
        arrays = dict(self.online.store.arrays())
        arrays.update({f"target/{k}": v for k, v in self.target.store.arrays().items()})
        arrays.update(self.opt.state_arrays())
        arrays["__meta/env_steps"] = np.array([self.env_steps], dtype=np.int64)
        arrays["__meta/train_steps"] = np.array([self.train_steps], dtype=np.int64)
        arrays["__meta/episodes"] = np.array([self.episodes], dtype=np.int64)
        return arrays

    def load_checkpoint_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.online.store.load_arrays({k: v for k, v in arrays.items()
                                       if not k.startswith(("target/", "__"))})
        self.target.store.load_arrays({k[len("target/"):]: v for k, v in arrays.items()
                                       if k.startswith("target/")})
        self.opt.load_state_arrays(arrays)
        self.env_steps = int(arrays["__meta/env_steps"][0])
        self.train_steps = int(arrays["__meta/train_steps"][0])
        self.episodes = int(arrays["__meta/episodes"][0])
