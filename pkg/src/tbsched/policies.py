"""Thread-block scheduling policies.

A policy is attached to one :class:`~tbsched.simengine.Simulator` and is told
about arrivals, block ends, kernel completions and full dispatch of a kernel.
When an SM has room, the engine calls ``candidates(sm)`` and issues one block
of the first listed kernel that fits.
"""

from __future__ import annotations

from typing import Mapping, Optional

from . import sspredictor as ssp
from .errors import MissingOracle

POLICY_NAMES = ("fifo", "mpmax", "srtf", "srtf-adaptive", "sjf", "ljf")


class Policy:
    name = "base"
    uses_predictor = False

    def attach(self, sim) -> None:
        self.sim = sim

    def on_arrival(self, k: int, now: int) -> None:
        pass

    def on_block_end(self, k: int, s: int, now: int) -> None:
        pass

    def on_kernel_end(self, k: int, now: int) -> None:
        pass

    def on_fully_dispatched(self, k: int, now: int) -> None:
        pass

    def on_wakeup(self, now: int, payload) -> None:
        pass

    def candidates(self, s: int):
        return ()


class FIFO(Policy):
    """Only the earliest-arrived kernel with unissued blocks may issue."""

    name = "fifo"

    def attach(self, sim):
        super().attach(sim)
        self.queue: list = []
        self._head: tuple = ()

    def _key(self, k):
        return (self.sim.arrival_cycle[k], k)

    def _refresh(self):
        self._head = (self.queue[0],) if self.queue else ()

    def on_arrival(self, k, now):
        self.queue.append(k)
        self.queue.sort(key=self._key)
        self._refresh()

    def on_fully_dispatched(self, k, now):
        self.queue.remove(k)
        self._refresh()
        if self.queue:
            self.sim.log("head", self.sim.ids[self.queue[0]])

    def candidates(self, s):
        return self._head


class OracleOrder(FIFO):
    """Strict priority by oracle alone-runtime (SJF ascending, LJF descending)."""

    descending = False

    def __init__(self, oracle_runtimes: Optional[Mapping[str, int]] = None):
        self.oracle_runtimes = oracle_runtimes

    def attach(self, sim):
        super().attach(sim)
        self.runtime = oracle_table(sim, self.oracle_runtimes)

    def _key(self, k):
        r = self.runtime[k]
        return (-r if self.descending else r, self.sim.arrival_cycle[k], k)


class SJF(OracleOrder):
    name = "sjf"


class LJF(OracleOrder):
    name = "ljf"
    descending = True


def oracle_table(sim, supplied: Optional[Mapping[str, int]]) -> list:
    """Alone-runtime per kernel ordinal, from ``supplied`` or solo simulations."""
    if supplied is None:
        from .simengine import solo_runtime

        return [solo_runtime(sim.workload, k, sim.seed) for k in sim.kernels]
    out = []
    for kid in sim.ids:
        if kid not in supplied:
            raise MissingOracle(f"no oracle runtime for kernel {kid!r}")
        out.append(supplied[kid])
    return out


class MPMax(Policy):
    """FIFO order, but each kernel leaves room for one block of every co-runner on each SM.

    Caps are recomputed whenever the set of running kernels changes, so a
    kernel that runs alone gets the whole SM back.
    """

    name = "mpmax"

    def attach(self, sim):
        super().attach(sim)
        self.order: list = []
        self.cap = list(sim.residency)

    def _recompute(self):
        sim = self.sim
        running = sim.running()
        for k in running:
            others = [j for j in running if j != k]
            cap = sim.residency_with_reserve(k, others) if others else sim.residency[k]
            # a kernel that cannot fit alongside its reservations still gets one block
            cap = max(cap, 1)
            if cap != self.cap[k]:
                sim.log("cap", f"{sim.ids[k]}={cap}")
            self.cap[k] = cap

    def on_arrival(self, k, now):
        self.order.append(k)
        self.order.sort(key=lambda j: (self.sim.arrival_cycle[j], j))
        self._recompute()

    def on_fully_dispatched(self, k, now):
        self.order.remove(k)

    def on_kernel_end(self, k, now):
        self._recompute()

    def candidates(self, s):
        resident = self.sim.resident
        return [k for k in self.order if resident[k][s] < self.cap[k]]


class SRTF(Policy):
    """Shortest remaining time first, driven by the online predictor.

    A kernel that arrives while another kernel still has blocks to issue is
    sampled on SM 0: SM 0 stops issuing the incumbent and, once the
    incumbent's blocks there have drained, runs the newcomer until its first
    block finishes. The sample is copied to every SM, after which all SMs
    issue the kernel with the smallest estimated remaining time. An SM only
    starts the chosen kernel once blocks of kernels it switched away from
    have drained. Decisions are re-evaluated at every block end; a challenger
    must be strictly shorter than the incumbent.

    ``oracle_runtimes=True`` skips sampling and estimates remaining time as
    alone_runtime * (1 - blocks_finished / total_blocks).
    """

    name = "srtf"
    uses_predictor = True
    SAMPLING_SM = 0

    def __init__(self, oracle_runtimes=False):
        self.oracle = oracle_runtimes

    def attach(self, sim):
        super().attach(sim)
        self.committed: Optional[int] = None
        self.sampling: Optional[int] = None
        self.queue: list = []
        self.known: set = set()
        self.owner: list = [None] * sim.n_sms
        self.alone = None
        if self.oracle:
            supplied = self.oracle if isinstance(self.oracle, Mapping) else None
            self.alone = oracle_table(sim, supplied)

    # -- estimates -----------------------------------------------------------

    def estimate(self, k: int):
        """GPU-level remaining time of ``k``: the largest per-SM estimate, or None."""
        sim = self.sim
        if self.alone is not None:
            return self.alone[k] * (sim.total[k] - sim.ended[k]) / sim.total[k]
        best = None
        for st in sim.pstate[k]:
            r = ssp.remaining_time(st, sim.now)
            if r is not ssp.UNSAMPLED and (best is None or r > best):
                best = r
        return best

    def _pending(self):
        sim = self.sim
        return [k for k in range(len(sim.kernels)) if sim.arrived[k] and sim.issued[k] < sim.total[k]]

    # -- decisions -----------------------------------------------------------

    def _set_owners(self):
        for s in range(self.sim.n_sms):
            self.owner[s] = self.committed
        if self.sampling is not None:
            self.owner[self.SAMPLING_SM] = self.sampling

    def _commit(self, k: Optional[int], why: str):
        if k != self.committed:
            self.committed = k
            if k is not None:
                self.known.add(k)
                self.sim.log("commit", f"{self.sim.ids[k]} ({why})")
        self._set_owners()

    def decide(self):
        sim = self.sim
        inc = self.committed
        if inc is not None and sim.issued[inc] >= sim.total[inc]:
            inc = None
        best, best_est = inc, (self.estimate(inc) if inc is not None else None)
        if inc is not None and best_est is None:
            self._set_owners()
            return
        for k in self._pending():
            if k == inc or k not in self.known or k == self.sampling:
                continue
            e = self.estimate(k)
            if e is None:
                continue
            if best_est is None or e < best_est:
                best, best_est = k, e
        if best is None:
            # nothing estimable left: take the oldest queued kernel without sampling
            waiting = [k for k in self.queue if k != self.sampling]
            if not waiting and self.sampling is not None:
                waiting = [self.sampling]
                self.sampling = None
            if waiting:
                best = waiting[0]
                if best in self.queue:
                    self.queue.remove(best)
        self._commit(best, "shortest remaining" if best is not inc else "incumbent")

    def _start_sampling(self):
        sim = self.sim
        if self.sampling is not None:
            return
        while self.queue:
            k = self.queue.pop(0)
            if sim.issued[k] >= sim.total[k]:
                continue
            self.sampling = k
            sim.log("sample", f"{sim.ids[k]} on SM{self.SAMPLING_SM}")
            break
        self._set_owners()

    def on_arrival(self, k, now):
        busy = [j for j in self._pending() if j != k]
        if not busy:
            self._commit(k, "idle")
            return
        if self.alone is not None:
            self.known.add(k)
            self.decide()
            return
        self.queue.append(k)
        self._start_sampling()

    def _sample_done(self, k, now):
        sim = self.sim
        t = sim.pstate[k][self.SAMPLING_SM].t
        for s, st in enumerate(sim.pstate[k]):
            if s != self.SAMPLING_SM:
                ssp.seed_prediction(st, t)
        self.sampling = None
        self.known.add(k)
        sim.log("sampled", f"{sim.ids[k]} t={t}")
        self.decide()
        self._start_sampling()

    def on_block_end(self, k, s, now):
        if k == self.sampling and s == self.SAMPLING_SM:
            self._sample_done(k, now)
        else:
            self.decide()

    def on_fully_dispatched(self, k, now):
        if k == self.committed:
            self.decide()

    def on_kernel_end(self, k, now):
        self.decide()

    def candidates(self, s):
        k = self.owner[s]
        if k is None:
            return ()
        sim = self.sim
        if sim.issued[k] >= sim.total[k]:
            return ()
        if sim.sm_resident[s] != sim.resident[k][s]:
            issued, total = sim.issued, sim.total
            for j, res in enumerate(sim.resident):
                if j != k and res[s] and issued[j] < total[j]:
                    return ()  # hand-off: wait for the switched-away kernel to drain
        return (k,)


def choose_mode(exclusive: Mapping, sharing: Optional[Mapping], threshold: float = 0.5) -> str:
    """``sharing`` iff the exclusive plan's slowdown spread exceeds ``threshold`` and sharing narrows it."""
    gap_e = max(exclusive.values()) - min(exclusive.values())
    if gap_e <= threshold or not sharing:
        return "exclusive"
    gap_s = max(sharing.values()) - min(sharing.values())
    return "sharing" if gap_s < gap_e else "exclusive"


class SRTFAdaptive(SRTF):
    """SRTF that shares SMs when exclusive execution would be unfair.

    The projected slowdowns of running kernels under the exclusive plan
    (serial, shortest first) are compared with a sharing plan in which the
    shortest kernel is capped at ``cap`` resident blocks per SM and the next
    kernel uses the remaining room. Sharing is chosen when the exclusive plan's
    slowdown spread exceeds ``threshold`` and sharing narrows it.
    """

    name = "srtf-adaptive"
    RECOMPUTE_EVERY = 8

    def __init__(self, oracle_runtimes=False, threshold: float = 0.5, cap: int = 3):
        super().__init__(oracle_runtimes)
        self.threshold = threshold
        self.cap = cap

    def attach(self, sim):
        super().attach(sim)
        self.mode = "exclusive"
        self.share: Optional[tuple] = None
        self._since = 0

    # -- plan projections ------------------------------------------------------

    def _kernel_view(self, k):
        """(remaining cycles, exclusive total runtime, per-SM remaining blocks, t, residency).

        Everything is expressed at the kernel's exclusive residency, so capping
        a kernel in sharing mode does not feed back into the plan comparison.
        """
        sim = self.sim
        r = sim.residency[k]
        if self.alone is not None:
            rem = self.alone[k] * (sim.total[k] - sim.ended[k]) / sim.total[k]
            per_sm = -(-(sim.total[k] - sim.ended[k]) // sim.n_sms)
            waves = max(1, -(-(-(-sim.total[k] // sim.n_sms)) // r))
            return rem, float(self.alone[k]), per_sm, self.alone[k] / waves, r
        best = None
        for st in sim.pstate[k]:
            if not st.t:
                continue
            left = max(0, st.total_blocks - st.done_blocks)
            rem = left * st.t / r
            if best is None or rem > best[0]:
                best = (rem, float(max(1, -(-st.total_blocks // r) * st.t)), left, st.t, r)
        return best

    def estimate(self, k: int):
        view = self._kernel_view(k)
        return None if view is None else view[0]

    def projected(self, kernels, now):
        """Slowdowns under the exclusive and sharing plans, keyed by kernel ordinal."""
        sim = self.sim
        views = {k: self._kernel_view(k) for k in kernels}
        if any(v is None for v in views.values()):
            return None
        order = sorted(kernels, key=lambda k: (views[k][0], sim.arrival_cycle[k], k))

        def slowdown(k, finish):
            elapsed = finish - sim.arrival_cycle[k]
            return elapsed / views[k][1]

        excl, clock = {}, now
        for k in order:
            clock += views[k][0]
            excl[k] = slowdown(k, clock)

        fast, slow = order[0], order[1]
        rem1, _, _, _, r1 = views[fast]
        c = min(self.cap, r1)
        ts1 = rem1 * r1 / c
        _, _, n2, t2, r2 = views[slow]
        r_shared = self._shared_residency(fast, slow, c)
        nb1 = ts1 * r_shared / t2 if t2 else 0.0
        nb2 = max(0.0, n2 - nb1)
        ts2 = -(-int(round(nb2)) // r2) * t2
        share = {fast: slowdown(fast, now + ts1), slow: slowdown(slow, now + ts1 + ts2)}
        clock = now + ts1 + ts2
        for k in order[2:]:
            clock += views[k][0]
            share[k] = slowdown(k, clock)
        return excl, share, (fast, slow)

    def _shared_residency(self, fast, slow, c):
        sim = self.sim
        return sim.residency_with_reserve(slow, [fast] * c)

    def update(self, why: str):
        sim = self.sim
        if self.sampling is not None:
            return
        pending = [k for k in self._pending() if k in self.known]
        new_mode, share = "exclusive", None
        if len(pending) >= 2:
            plan = self.projected(pending, sim.now)
            if plan is not None:
                excl, shared, pair = plan
                if choose_mode(excl, shared, self.threshold) == "sharing":
                    new_mode, share = "sharing", pair
        if (new_mode, share) != (self.mode, self.share):
            self._apply(new_mode, share, why)

    def _apply(self, mode, share, why):
        sim = self.sim
        if self.share is not None:
            fast = self.share[0]
            for st in sim.pstate[fast]:
                ssp.set_residency(st, sim.residency[fast])
        self.mode, self.share = mode, share
        if share is not None:
            fast = share[0]
            c = min(self.cap, sim.residency[fast])
            for st in sim.pstate[fast]:
                ssp.set_residency(st, c)
            sim.log("mode", f"sharing cap {sim.ids[fast]}={c} with {sim.ids[share[1]]} ({why})")
        else:
            sim.log("mode", f"exclusive ({why})")
            super().decide()

    # -- hooks ---------------------------------------------------------------

    def decide(self):
        if self.mode == "exclusive":
            super().decide()

    def on_arrival(self, k, now):
        super().on_arrival(k, now)
        self.update("arrival")

    def _sample_done(self, k, now):
        super()._sample_done(k, now)
        self.update("sample")

    def on_block_end(self, k, s, now):
        super().on_block_end(k, s, now)
        self._since += 1
        if self._since >= self.RECOMPUTE_EVERY:
            self._since = 0
            self.update("periodic")

    def on_fully_dispatched(self, k, now):
        if self.share is not None and k in self.share:
            self._apply("exclusive", None, "dispatched")
        super().on_fully_dispatched(k, now)
        self.update("dispatched")

    def on_kernel_end(self, k, now):
        super().on_kernel_end(k, now)
        self.update("kernel end")

    def candidates(self, s):
        if self.share is None or (self.sampling is not None and s == self.SAMPLING_SM):
            return super().candidates(s)
        fast, slow = self.share
        if self.sim.resident[fast][s] < min(self.cap, self.sim.residency[fast]):
            return (fast, slow)
        return (slow,)


_REGISTRY = {
    "fifo": FIFO,
    "mpmax": MPMax,
    "srtf": SRTF,
    "srtf-adaptive": SRTFAdaptive,
    "sjf": SJF,
    "ljf": LJF,
}


def make_policy(name: str, **kwargs) -> Policy:
    """Build a policy by CLI name. Unused keyword arguments are ignored."""
    try:
        cls = _REGISTRY[name]
    except KeyError:
        raise ValueError(f"unknown policy {name!r}; choose from {', '.join(POLICY_NAMES)}") from None
    if cls in (SJF, LJF):
        return cls(kwargs.get("oracle_runtimes") if isinstance(kwargs.get("oracle_runtimes"), Mapping) else None)
    if cls is SRTF:
        return cls(kwargs.get("oracle_runtimes", False))
    if cls is SRTFAdaptive:
        return cls(kwargs.get("oracle_runtimes", False), kwargs.get("threshold", 0.5), kwargs.get("cap", 3))
    return cls()
