"""Accelerated backward-stage backends for the hybrid-plant DP problems.

These precompute everything that does not depend on the value field (battery
response tables, generator efficiency rows, merged cost rows) and evaluate a
whole backward stage as array math. Results match the scalar step functions
to floating-point noise; the scalar path remains the reference contract and
the test suite cross-checks the two on short missions.

Parallelism: the series kernel splits work across SOC rows; every
(state, control) candidate is reduced by a single thread in a fixed order,
so results are bit-identical regardless of worker count.
"""

from __future__ import annotations

import numpy as np

from . import dp as dp_mod
from . import maps as maps_mod
from .architectures import ParallelPlant, SeriesPlant
from .mission import MissionProfile

try:
    import numba
    from numba import njit, prange

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap if not (args and callable(args[0])) else args[0]

    prange = range

_SNAP = 1e-12  # node-snap tolerance shared with dp.interp_value (relative)


def set_jobs(jobs: int | None) -> int:
    """Cap the number of DP worker threads; returns the effective count."""
    if not HAVE_NUMBA:
        return 1
    limit = numba.config.NUMBA_NUM_THREADS
    if jobs is None:
        return limit
    eff = max(1, min(int(jobs), limit))
    numba.set_num_threads(eff)
    return eff


def _snap_weights(pos, n_nodes):
    """Cell index and weight on a uniform grid with exact-node snapping.

    The snap threshold is on the weight itself, slightly tighter than
    dp.interp_value's absolute-coordinate tolerance; queries inside the gap
    sit within ~1e-12 of a node, where the one-sided infeasibility handling
    makes both formulations agree anyway.
    """
    idx = np.clip(np.floor(pos).astype(np.int64), 0, n_nodes - 2)
    w = pos - idx
    w = np.where(w <= _SNAP, 0.0, w)
    w = np.where(w >= 1.0 - _SNAP, 1.0, w)
    return idx, w


def _lerp_vals(v0, v1, w):
    """Linear blend that never crosses INFEASIBLE corners.

    Mirrors dp.interp_value: both corners finite -> linear blend; one finite
    -> that corner's value (unless the query sits exactly on the infeasible
    node); none finite -> INFEASIBLE.
    """
    f0 = np.isfinite(v0)
    f1 = np.isfinite(v1)
    with np.errstate(invalid="ignore"):
        mid = (1.0 - w) * v0 + w * v1
    both = np.where(w == 0.0, v0, np.where(w == 1.0, v1, mid))
    only0 = np.where(w < 1.0, v0, np.inf)
    only1 = np.where(w > 0.0, v1, np.inf)
    return np.where(f0 & f1, both, np.where(f0, only0, np.where(f1, only1, np.inf)))


def _lerp_rows(v_next_1d, idx, w):
    return _lerp_vals(v_next_1d[idx], v_next_1d[idx + 1], w)


# ---------------------------------------------------------------------------
# Parallel hybrid: state (soc,), control (alpha,)


def parallel_backend(plant: ParallelPlant, mission: MissionProfile, soc_axis, alpha_axis, cost_grid, dt):
    """Build (backward_stage, evaluate_controls) closures for the parallel plant."""
    soc_axis = np.asarray(soc_axis, dtype=float)
    alpha_axis = np.asarray(alpha_axis, dtype=float)
    n_stages = len(mission) - 1
    omega = mission.omega[:n_stages]
    torque = mission.torque[:n_stages]
    omega_dot = mission.omega_dot()[:n_stages]

    tr = plant.transmission
    tau_tc = plant.coupling.tau
    sgn = -np.sign(torque) * np.sign(omega)
    t_tran = (torque / tr.tau) * tr.eta**sgn + tr.inertia * omega_dot * tr.tau
    w_tran = omega * tr.tau
    wd_tran = omega_dot * tr.tau

    w_em = w_tran * tau_tc
    wd_em = wd_tran * tau_tc
    a = alpha_axis[None, :]
    t_em = a * t_tran[:, None] / tau_tc + plant.emachine.inertia * wd_em[:, None]
    t_eng = (1.0 - a) * t_tran[:, None] + plant.engine.inertia * wd_tran[:, None]

    em = plant.emachine.maps
    sup = em.torque_sup(w_em)
    inf = em.torque_inf(w_em)
    tol_em = 1e-9 * np.maximum(np.abs(sup), 1.0)
    feas = (
        (w_em <= em.omega_max * (1.0 + 1e-9))[:, None]
        & (t_em <= (sup + tol_em)[:, None])
        & (t_em >= (inf - tol_em)[:, None])
    )
    ya = em.efficiency.y_axis
    eta = maps_mod.interp2_many(
        em.efficiency,
        np.broadcast_to(w_em[:, None], t_em.shape),
        np.clip(t_em, ya[0], ya[-1]),
    )
    p_mech = t_em * w_em[:, None]
    p_el = np.where(p_mech >= 0, p_mech / eta, eta * p_mech)

    m = plant.engine.maps
    tol_w = 1e-9 * m.omega_max
    w_ok = (w_tran >= m.omega_idle - tol_w) & (w_tran <= m.omega_max + tol_w)
    w_eng = np.clip(w_tran, m.omega_idle, m.omega_max)
    t_lim = m.torque_max(w_eng)
    feas &= w_ok[:, None] & (t_eng <= (t_lim * (1.0 + 1e-9))[:, None])
    t_query = np.clip(t_eng, 0.0, t_lim[:, None])
    cost_dt = maps_mod.interp2_many(
        cost_grid, np.broadcast_to(w_eng[:, None], t_query.shape), t_query
    ) * dt
    p_load = p_el + plant.aux_load_w

    batt = plant.battery
    voc = np.asarray(batt.v_oc(soc_axis), dtype=float)
    req = np.asarray(batt.r_eq(soc_axis), dtype=float)
    ns = soc_axis.size
    d_soc = (soc_axis[-1] - soc_axis[0]) / (ns - 1)

    barrier = dp_mod.WINDOW_BARRIER

    def _battery(soc_vals, voc_vals, req_vals, pl):
        """Battery response for soc column vectors against a load row.

        The SOC window is a soft barrier: violations are clamped into the
        window and surcharged instead of cut, matching the scalar evaluator.
        """
        with np.errstate(invalid="ignore"):
            disc = voc_vals[:, None] ** 2 - 4.0 * req_vals[:, None] * pl[None, :]
            ok = disc >= 0.0
            i_b = (voc_vals[:, None] - np.sqrt(np.maximum(disc, 0.0))) / (2.0 * req_vals[:, None])
        ok &= (i_b <= batt.i_lim_dis * (1.0 + 1e-12)) & (i_b >= batt.i_lim_ch * (1.0 + 1e-12))
        eta_c = np.where(i_b > 0, batt.eta_c_discharge, batt.eta_c_charge)
        soc_next = soc_vals[:, None] - eta_c * i_b * dt / batt.capacity_as
        penalty = barrier * (
            np.maximum(0.0, batt.soc_min - soc_next) + np.maximum(0.0, soc_next - batt.soc_max)
        )
        return ok, penalty, np.clip(soc_next, soc_axis[0], soc_axis[-1])

    def backward_stage(k, v_next):
        ok, penalty, soc_next = _battery(soc_axis, voc, req, p_load[k])
        ok &= feas[k][None, :]
        idx, w = _snap_weights((soc_next - soc_axis[0]) / d_soc, ns)
        w_val = _lerp_rows(v_next, idx, w)
        with np.errstate(invalid="ignore"):
            total = np.where(ok, cost_dt[k][None, :] + penalty + w_val, np.inf)
        v_out = total.min(axis=1)
        pol = np.where(np.isfinite(v_out), total.argmin(axis=1), -1)
        return v_out, pol.astype(np.int64)

    def evaluate_controls(k, state):
        soc = np.asarray([state[0]], dtype=float)
        ok, penalty, soc_next = _battery(
            soc,
            np.asarray([float(batt.v_oc(state[0]))]),
            np.asarray([float(batt.r_eq(state[0]))]),
            p_load[k],
        )
        ok = ok[0] & feas[k]
        return soc_next[0][:, None], cost_dt[k] + penalty[0], ok

    return backward_stage, evaluate_controls


# ---------------------------------------------------------------------------
# Series hybrid: state (soc, omega_eng_prev), control (phi, omega_eng)


@njit(cache=True, parallel=True, nogil=True)
def _series_stage_kernel(
    v_next,  # (ns, nw)
    stage_ok,  # bool
    p_mot_tot,  # scalar
    p_b,  # (ns, na)
    soc_idx,  # (ns, na) int64
    soc_w,  # (ns, na)
    b_ok,  # (ns, na) bool
    pen_b,  # (ns, na) soft window penalty
    off_ok,  # (ns,) bool
    off_pen,  # (ns,)
    off_idx,  # (ns,) int64
    off_w,  # (ns,)
    omega_gen,  # (nw,)
    tel_lo,  # (nw,)
    tel_hi,  # (nw,)
    effrow,  # (nw, nte)
    te0,
    dte_inv,
    costrow,  # (nw, ntq)
    tq0,
    dtq_inv,
    tmax,  # (nw,)
    d_t,  # (nw, nw) inertia torque from omega_prev j to omega_cmd b
    tau_tc,
    dt,
    v_out,  # (ns, nw)
    p_out,  # (ns, nw) int64
):
    ns, nw = v_out.shape
    na = p_b.shape[1]
    nte = effrow.shape[1]
    ntq = costrow.shape[1]
    for i in prange(ns):
        w_ab = np.empty((na, nw))
        tg_ab = np.empty((na, nw))
        if stage_ok:
            for a_i in range(na):
                if not b_ok[i, a_i]:
                    for b_i in range(nw):
                        w_ab[a_i, b_i] = np.inf
                    continue
                i2 = soc_idx[i, a_i]
                wt = soc_w[i, a_i]
                pgen = p_mot_tot - p_b[i, a_i]
                for b_i in range(1, nw):
                    wg = omega_gen[b_i]
                    tel = pgen / wg
                    if tel < tel_lo[b_i] or tel > tel_hi[b_i]:
                        w_ab[a_i, b_i] = np.inf
                        continue
                    pos = (tel - te0) * dte_inv
                    if pos <= 0.0:
                        eta = effrow[b_i, 0]
                    elif pos >= nte - 1:
                        eta = effrow[b_i, nte - 1]
                    else:
                        q = int(pos)
                        eta = effrow[b_i, q] + (effrow[b_i, q + 1] - effrow[b_i, q]) * (pos - q)
                    if pgen >= 0.0:
                        tgen = pgen / (eta * wg)
                    else:
                        tgen = eta * pgen / wg
                    va = v_next[i2, b_i]
                    vb = v_next[i2 + 1, b_i]
                    fa = va != np.inf
                    fb = vb != np.inf
                    if fa and fb:
                        if wt == 0.0:
                            wv = va
                        elif wt == 1.0:
                            wv = vb
                        else:
                            wv = (1.0 - wt) * va + wt * vb
                    elif fa:
                        wv = va if wt < 1.0 else np.inf
                    elif fb:
                        wv = vb if wt > 0.0 else np.inf
                    else:
                        wv = np.inf
                    w_ab[a_i, b_i] = wv
                    tg_ab[a_i, b_i] = tgen
        for j in range(nw):
            best = np.inf
            best_u = -1
            if stage_ok and off_ok[i]:
                i2 = off_idx[i]
                wt = off_w[i]
                va = v_next[i2, 0]
                vb = v_next[i2 + 1, 0]
                fa = va != np.inf
                fb = vb != np.inf
                if fa and fb:
                    if wt == 0.0:
                        woff = va
                    elif wt == 1.0:
                        woff = vb
                    else:
                        woff = (1.0 - wt) * va + wt * vb
                elif fa:
                    woff = va if wt < 1.0 else np.inf
                elif fb:
                    woff = vb if wt > 0.0 else np.inf
                else:
                    woff = np.inf
                woff = woff + off_pen[i]
                if woff < best:
                    best = woff
                    best_u = 0
            if stage_ok:
                for a_i in range(na):
                    if not b_ok[i, a_i]:
                        continue
                    for b_i in range(1, nw):
                        wv = w_ab[a_i, b_i]
                        if wv == np.inf:
                            continue
                        teng = tau_tc * tg_ab[a_i, b_i] + d_t[b_i, j]
                        lim = tmax[b_i]
                        if teng > lim * (1.0 + 1e-9):
                            continue
                        tq = teng
                        if tq < 0.0:
                            tq = 0.0
                        elif tq > lim:
                            tq = lim
                        pos = (tq - tq0) * dtq_inv
                        if pos <= 0.0:
                            c = costrow[b_i, 0]
                        elif pos >= ntq - 1:
                            c = costrow[b_i, ntq - 1]
                        else:
                            q = int(pos)
                            c = costrow[b_i, q] + (costrow[b_i, q + 1] - costrow[b_i, q]) * (pos - q)
                        tot = c * dt + pen_b[i, a_i] + wv
                        if tot < best:
                            best = tot
                            best_u = a_i * nw + b_i
            v_out[i, j] = best
            p_out[i, j] = best_u


class _SeriesTables:
    """Stage-invariant precomputations for the series DP problem."""

    def __init__(self, plant: SeriesPlant, mission: MissionProfile, soc_axis, phi_axis, omega_axis, cost_grid, dt):
        self.plant = plant
        self.dt = float(dt)
        self.soc_axis = np.asarray(soc_axis, dtype=float)
        self.phi_axis = np.asarray(phi_axis, dtype=float)
        self.omega_axis = np.asarray(omega_axis, dtype=float)
        ns = self.soc_axis.size
        nw = self.omega_axis.size
        batt = plant.battery
        n_stages = len(mission) - 1

        tr = plant.transmission
        omega = mission.omega[:n_stages]
        torque = mission.torque[:n_stages]
        omega_dot = mission.omega_dot()[:n_stages]
        sgn = -np.sign(torque) * np.sign(omega)
        t_tran = (torque / tr.tau) * tr.eta**sgn + tr.inertia * omega_dot * tr.tau
        w_mot = omega * tr.tau
        t_mot = t_tran + plant.motor.inertia * omega_dot * tr.tau

        mm = plant.motor.maps
        sup = mm.torque_sup(w_mot)
        inf = mm.torque_inf(w_mot)
        tol = 1e-9 * np.maximum(np.abs(sup), 1.0)
        self.stage_ok = (
            (w_mot <= mm.omega_max * (1.0 + 1e-9))
            & (t_mot <= sup + tol)
            & (t_mot >= inf - tol)
        )
        ya = mm.efficiency.y_axis
        eta_mot = maps_mod.interp2_many(mm.efficiency, w_mot, np.clip(t_mot, ya[0], ya[-1]))
        p_mech = w_mot * t_mot
        p_el = np.where(p_mech >= 0, p_mech / eta_mot, eta_mot * p_mech)
        self.p_mot_tot = np.where(self.stage_ok, p_el + plant.aux_load_w, 0.0)

        # battery response per (soc node, phi node); stage-invariant. The SOC
        # window is a soft barrier (penalty + clamp), not a hard cut.
        barrier = dp_mod.WINDOW_BARRIER
        voc = np.asarray(batt.v_oc(self.soc_axis), dtype=float)
        req = np.asarray(batt.r_eq(self.soc_axis), dtype=float)
        i_phi = np.where(self.phi_axis >= 0, self.phi_axis * batt.i_lim_dis,
                         self.phi_axis * abs(batt.i_lim_ch))
        self.i_phi = i_phi
        self.p_b = voc[:, None] * i_phi[None, :] - req[:, None] * i_phi[None, :] ** 2
        eta_c = np.where(i_phi > 0, batt.eta_c_discharge, batt.eta_c_charge)
        soc_next = self.soc_axis[:, None] - eta_c[None, :] * i_phi[None, :] * dt / batt.capacity_as
        self.b_ok = np.ones_like(soc_next, dtype=bool)
        self.pen_b = barrier * (
            np.maximum(0.0, batt.soc_min - soc_next) + np.maximum(0.0, soc_next - batt.soc_max)
        )
        d_soc = (self.soc_axis[-1] - self.soc_axis[0]) / (ns - 1)
        self.d_soc = d_soc
        pos = (np.clip(soc_next, self.soc_axis[0], self.soc_axis[-1]) - self.soc_axis[0]) / d_soc
        self.soc_idx, self.soc_w = _snap_weights(pos, ns)

        # engine-off: battery matches the DC load exactly; tables per (stage, soc node)
        with np.errstate(invalid="ignore"):
            disc = voc[None, :] ** 2 - 4.0 * req[None, :] * self.p_mot_tot[:, None]
            ok = disc >= 0.0
            i_off = (voc[None, :] - np.sqrt(np.maximum(disc, 0.0))) / (2.0 * req[None, :])
        ok &= (i_off <= batt.i_lim_dis * (1.0 + 1e-12)) & (i_off >= batt.i_lim_ch * (1.0 + 1e-12))
        eta_c_off = np.where(i_off > 0, batt.eta_c_discharge, batt.eta_c_charge)
        soc_off = self.soc_axis[None, :] - eta_c_off * i_off * dt / batt.capacity_as
        self.off_pen = barrier * (
            np.maximum(0.0, batt.soc_min - soc_off) + np.maximum(0.0, soc_off - batt.soc_max)
        )
        self.off_ok = ok & self.stage_ok[:, None]
        pos = (np.clip(soc_off, self.soc_axis[0], self.soc_axis[-1]) - self.soc_axis[0]) / d_soc
        self.off_idx, self.off_w = _snap_weights(pos, ns)
        self.i_off = i_off

        # generator rows per commanded engine speed (node 0 is engine-off)
        tau_tc = plant.coupling.tau
        self.tau_tc = tau_tc
        gm = plant.generator.maps
        omega_gen = self.omega_axis * tau_tc
        self.omega_gen = omega_gen
        sup_g = gm.torque_sup(np.clip(omega_gen, 0.0, gm.omega_max))
        inf_g = gm.torque_inf(np.clip(omega_gen, 0.0, gm.omega_max))
        tol_g = 1e-9 * np.maximum(np.abs(sup_g), 1.0)
        self.tel_lo = inf_g - tol_g
        self.tel_hi = sup_g + tol_g
        speed_bad = omega_gen > gm.omega_max * (1.0 + 1e-9)
        self.tel_lo[speed_bad] = 1.0
        self.tel_hi[speed_bad] = -1.0  # empty interval disables these nodes
        te_axis = gm.efficiency.y_axis
        self.te0 = float(te_axis[0])
        self.dte_inv = (te_axis.size - 1) / (te_axis[-1] - te_axis[0])
        self.effrow = np.empty((nw, te_axis.size))
        for b in range(nw):
            wq = min(max(omega_gen[b], 0.0), gm.omega_max)
            self.effrow[b] = maps_mod.interp2_many(
                gm.efficiency, np.full(te_axis.size, wq), te_axis
            )

        # engine cost rows and torque limits per commanded speed
        em = plant.engine.maps
        tq_axis = cost_grid.y_axis
        self.tq0 = float(tq_axis[0])
        self.dtq_inv = (tq_axis.size - 1) / (tq_axis[-1] - tq_axis[0])
        self.costrow = np.empty((nw, tq_axis.size))
        self.tmax = np.empty(nw)
        for b in range(nw):
            wq = min(max(self.omega_axis[b], em.omega_idle), em.omega_max)
            self.costrow[b] = maps_mod.interp2_many(cost_grid, np.full(tq_axis.size, wq), tq_axis)
            self.tmax[b] = em.torque_max(wq)
        self.costrow[0] = 0.0
        self.tmax[0] = 0.0

        j_eff = plant.generator.inertia * tau_tc**2 + plant.engine.inertia
        self.j_eff = j_eff
        self.d_t = j_eff * (self.omega_axis[:, None] - self.omega_axis[None, :]) / dt


def series_backend(plant: SeriesPlant, mission: MissionProfile, soc_axis, phi_axis, omega_axis, cost_grid, dt):
    """Build (backward_stage, evaluate_controls) closures for the series plant.

    The flat control index is a*nw + b over (phi node a, engine-speed node b).
    Flat index 0 is the single engine-off control: the battery command is
    replaced by the exact load-matching current; (a > 0, b = 0) pairs are
    infeasible so the off mode is not duplicated.
    """
    tab = _SeriesTables(plant, mission, soc_axis, phi_axis, omega_axis, cost_grid, dt)
    ns = tab.soc_axis.size
    nw = tab.omega_axis.size
    na = tab.phi_axis.size
    batt = plant.battery

    if HAVE_NUMBA:
        def backward_stage(k, v_next):
            v_out = np.empty((ns, nw))
            p_out = np.empty((ns, nw), dtype=np.int64)
            _series_stage_kernel(
                v_next, bool(tab.stage_ok[k]), float(tab.p_mot_tot[k]),
                tab.p_b, tab.soc_idx, tab.soc_w, tab.b_ok, tab.pen_b,
                tab.off_ok[k], tab.off_pen[k], tab.off_idx[k], tab.off_w[k],
                tab.omega_gen, tab.tel_lo, tab.tel_hi,
                tab.effrow, tab.te0, tab.dte_inv,
                tab.costrow, tab.tq0, tab.dtq_inv,
                tab.tmax, tab.d_t, tab.tau_tc, tab.dt,
                v_out, p_out,
            )
            return v_out, p_out
    else:
        def backward_stage(k, v_next):  # pragma: no cover - exercised without numba
            return _series_stage_numpy(tab, k, v_next)

    barrier = dp_mod.WINDOW_BARRIER

    def evaluate_controls(k, state):
        soc, w_prev = float(state[0]), float(state[1])
        nxt = np.zeros((na * nw, 2))
        costs = np.full(na * nw, np.inf)
        feas = np.zeros(na * nw, dtype=bool)
        if not tab.stage_ok[k]:
            return nxt, costs, feas
        voc = float(batt.v_oc(soc))
        req = float(batt.r_eq(soc))
        p_mot = float(tab.p_mot_tot[k])

        # engine-off candidate at flat index 0
        disc = voc * voc - 4.0 * req * p_mot
        if disc >= 0.0:
            i_off = (voc - np.sqrt(disc)) / (2.0 * req)
            if batt.i_lim_ch * (1.0 + 1e-12) <= i_off <= batt.i_lim_dis * (1.0 + 1e-12):
                eta_c = batt.eta_c_discharge if i_off > 0 else batt.eta_c_charge
                soc_next = soc - eta_c * i_off * tab.dt / batt.capacity_as
                pen = barrier * (max(0.0, batt.soc_min - soc_next) + max(0.0, soc_next - batt.soc_max))
                nxt[0] = (min(max(soc_next, tab.soc_axis[0]), tab.soc_axis[-1]), 0.0)
                costs[0] = pen
                feas[0] = True

        i_phi = tab.i_phi
        p_b = voc * i_phi - req * i_phi**2
        eta_c = np.where(i_phi > 0, batt.eta_c_discharge, batt.eta_c_charge)
        soc_next = soc - eta_c * i_phi * tab.dt / batt.capacity_as
        pen_a = barrier * (
            np.maximum(0.0, batt.soc_min - soc_next) + np.maximum(0.0, soc_next - batt.soc_max)
        )
        soc_next = np.clip(soc_next, tab.soc_axis[0], tab.soc_axis[-1])
        pgen = p_mot - p_b  # (na,)

        tel = pgen[:, None] / np.where(tab.omega_gen == 0.0, 1.0, tab.omega_gen)[None, :]
        ok = (tel >= tab.tel_lo[None, :]) & (tel <= tab.tel_hi[None, :])
        ok[:, 0] = False
        pos = np.clip((tel - tab.te0) * tab.dte_inv, 0.0, tab.effrow.shape[1] - 1)
        q = np.minimum(pos.astype(np.int64), tab.effrow.shape[1] - 2)
        f = pos - q
        rows = np.broadcast_to(np.arange(nw)[None, :], q.shape)
        eta = tab.effrow[rows, q] + (tab.effrow[rows, q + 1] - tab.effrow[rows, q]) * f
        with np.errstate(divide="ignore", invalid="ignore"):
            tgen = np.where(
                pgen[:, None] >= 0.0,
                pgen[:, None] / (eta * np.where(tab.omega_gen == 0.0, 1.0, tab.omega_gen)[None, :]),
                eta * pgen[:, None] / np.where(tab.omega_gen == 0.0, 1.0, tab.omega_gen)[None, :],
            )
        d_row = tab.j_eff * (tab.omega_axis - w_prev) / tab.dt  # (nw,)
        teng = tab.tau_tc * tgen + d_row[None, :]
        ok &= teng <= tab.tmax[None, :] * (1.0 + 1e-9)
        tq = np.clip(teng, 0.0, tab.tmax[None, :])
        pos = np.clip((tq - tab.tq0) * tab.dtq_inv, 0.0, tab.costrow.shape[1] - 1)
        q = np.minimum(pos.astype(np.int64), tab.costrow.shape[1] - 2)
        f = pos - q
        c = tab.costrow[rows, q] + (tab.costrow[rows, q + 1] - tab.costrow[rows, q]) * f

        flat = slice(0, na * nw)
        nxt_on = np.stack(
            [np.broadcast_to(soc_next[:, None], (na, nw)), np.broadcast_to(tab.omega_axis[None, :], (na, nw))],
            axis=-1,
        ).reshape(na * nw, 2)
        costs_on = (c * tab.dt + pen_a[:, None]).reshape(na * nw)
        feas_on = ok.reshape(na * nw)
        keep_off = feas[0]
        off_state = nxt[0].copy()
        off_cost = costs[0]
        nxt[flat] = nxt_on
        costs[flat] = costs_on
        feas[flat] = feas_on
        if keep_off:
            nxt[0] = off_state
            costs[0] = off_cost
            feas[0] = True
        else:
            feas[0] = False
            costs[0] = np.inf
        return nxt, costs, feas

    return backward_stage, evaluate_controls


def _series_stage_numpy(tab: _SeriesTables, k, v_next):
    """Pure-numpy fallback mirror of the series stage kernel."""
    ns = tab.soc_axis.size
    nw = tab.omega_axis.size
    na = tab.phi_axis.size
    v_out = np.full((ns, nw), np.inf)
    p_out = np.full((ns, nw), -1, dtype=np.int64)
    if not tab.stage_ok[k]:
        return v_out, p_out

    pgen = tab.p_mot_tot[k] - tab.p_b  # (ns, na)
    w_ab = np.full((ns, na, nw), np.inf)
    tg_ab = np.zeros((ns, na, nw))
    omega_on = tab.omega_gen[1:]
    tel = pgen[:, :, None] / omega_on[None, None, :]
    ok = tab.b_ok[:, :, None] & (tel >= tab.tel_lo[1:][None, None, :]) & (tel <= tab.tel_hi[1:][None, None, :])
    pos = np.clip((tel - tab.te0) * tab.dte_inv, 0.0, tab.effrow.shape[1] - 1)
    q = np.minimum(pos.astype(np.int64), tab.effrow.shape[1] - 2)
    f = pos - q
    rows = np.broadcast_to(np.arange(1, nw)[None, None, :], q.shape)
    eta = tab.effrow[rows, q] + (tab.effrow[rows, q + 1] - tab.effrow[rows, q]) * f
    tgen = np.where(pgen[:, :, None] >= 0, tel / eta, eta * tel)
    tg_ab[:, :, 1:] = tgen
    v0 = v_next[tab.soc_idx, 1:][:, :, :]  # fancy: (ns, na, nw-1)
    v1 = v_next[tab.soc_idx + 1, 1:]
    wv = _lerp_vals(v0, v1, tab.soc_w[:, :, None])
    w_ab[:, :, 1:] = np.where(ok, wv, np.inf)

    # off-mode value toward the omega = 0 column
    w_off = _lerp_vals(v_next[tab.off_idx[k], 0], v_next[tab.off_idx[k] + 1, 0], tab.off_w[k])
    w_off = np.where(tab.off_ok[k], w_off + tab.off_pen[k], np.inf)

    for j in range(nw):
        teng = tab.tau_tc * tg_ab[:, :, 1:] + tab.d_t[1:, j][None, None, :]
        lim = tab.tmax[1:][None, None, :]
        ok_t = np.isfinite(w_ab[:, :, 1:]) & (teng <= lim * (1.0 + 1e-9))
        tq = np.clip(teng, 0.0, lim)
        pos = np.clip((tq - tab.tq0) * tab.dtq_inv, 0.0, tab.costrow.shape[1] - 1)
        q = np.minimum(pos.astype(np.int64), tab.costrow.shape[1] - 2)
        f = pos - q
        rows = np.broadcast_to(np.arange(1, nw)[None, None, :], q.shape)
        c = tab.costrow[rows, q] + (tab.costrow[rows, q + 1] - tab.costrow[rows, q]) * f
        with np.errstate(invalid="ignore"):
            tot = np.where(ok_t, c * tab.dt + tab.pen_b[:, :, None] + w_ab[:, :, 1:], np.inf)
        flat = tot.reshape(ns, na * (nw - 1))
        # map flat index a*(nw-1)+(b-1) back to a*nw+b
        best_flat = flat.argmin(axis=1)
        best_val = flat[np.arange(ns), best_flat]
        a_i = best_flat // (nw - 1)
        b_i = best_flat % (nw - 1) + 1
        best_u = a_i * nw + b_i
        use_off = w_off < best_val
        v_out[:, j] = np.where(use_off, w_off, best_val)
        p_out[:, j] = np.where(use_off, 0, np.where(np.isfinite(best_val), best_u, -1))
        p_out[:, j] = np.where(np.isfinite(v_out[:, j]), p_out[:, j], -1)
    return v_out, p_out
