"""Mutable sampling state over a frozen model graph.

Holds the flat vector of sampled values plus a per-element cache of log
density terms. The cache is write-through: every mutation goes through a
propose/commit/restore protocol that recomputes exactly the affected terms,
so the cache is always in sync with the values outside an in-flight proposal.

Log-link predictors that are purely linear in sampled dims are cached per
element as well (self.eta) and updated by increments on scalar writes;
restores put back the saved slice exactly, so rejected moves leave no
rounding residue. Block writes rebuild affected predictors wholesale.

eval_count tallies how many element-level conditional density terms have been
computed; it is the deterministic cost model used in place of wall time when
reproducibility matters. A multivariate normal node charges its element count
per evaluation plus n*n extra whenever its Cholesky factor is rebuilt.
"""

import math

import numpy as np

from . import density
from .density import NEG_INF


class ModelState:
    __slots__ = ("graph", "values", "terms", "eval_count", "mvn_cache", "eta")

    def __init__(self, graph, values):
        if values.shape != (graph.m,):
            raise ValueError(f"state vector must have length {graph.m}")
        self.graph = graph
        self.values = values
        self.terms = np.empty(graph.n_terms)
        self.eval_count = 0
        self.mvn_cache = {}
        self.eta = {}
        self.recompute_all()

    def copy(self):
        c = ModelState.__new__(ModelState)
        c.graph = self.graph
        c.values = self.values.copy()
        c.terms = self.terms.copy()
        c.eval_count = self.eval_count
        c.mvn_cache = dict(self.mvn_cache)
        c.eta = {ni: arr.copy() for ni, arr in self.eta.items()}
        return c

    # -- evaluation ----------------------------------------------------

    def recompute_all(self):
        g = self.graph
        self.eta = {}
        for ni in g.loglin_cached:
            p = g.plans[ni]
            self.eta[ni] = density.loglin_eta(p.loglin, self, None, p.shape)
        self._eval_steps(g.node_steps)

    def _eval_steps(self, steps):
        terms = self.terms
        n_ev = 0
        for ep, el, tgt, cnt in steps:
            if type(el) is int:
                if ep.use_eta:
                    terms[tgt] = density.poisson_eta_one(
                        ep, self.eta[ep.node_i][el], el)
                else:
                    terms[tgt] = ep.f_one(ep, self, el)
                n_ev += 1
            elif type(el) is tuple:
                if ep.use_eta:
                    ev = self.eta[ep.node_i]
                    for e, ti in zip(el, tgt):
                        terms[ti] = density.poisson_eta_one(ep, ev[e], e)
                else:
                    fo = ep.f_one
                    for e, ti in zip(el, tgt):
                        terms[ti] = fo(ep, self, e)
                n_ev += cnt
            elif ep.kind == "mvn_expcov":
                t, extra = density.mvn_expcov_term(ep, self)
                terms[tgt] = t
                n_ev += cnt + extra
            elif ep.use_eta:
                terms[tgt] = density.poisson_eta_vec(
                    ep, self.eta[ep.node_i], el)
                n_ev += cnt
            else:
                terms[tgt] = ep.f_vec(ep, self, el)
                n_ev += cnt
        self.eval_count += n_ev

    def det_value(self, ni):
        op, srcs, bias = self.graph.det_plans[ni]
        if op == "sum":
            v = bias
            for s in srcs:
                v += density.fetch_scalar(s, self)
            return v
        v = density.fetch_scalar(srcs[0], self)
        if op == "exp":
            return math.exp(v) if v < 709.0 else float("inf")
        # invsq
        if v == 0.0:
            return float("inf")
        return 1.0 / (v * v)

    # -- log densities ---------------------------------------------------

    def logp_full(self):
        return float(self.terms.sum())

    def logp_plan(self, plan):
        return float(self._lp(plan))

    def logp_dim(self, k):
        return float(self._lp(self.graph.dim_plans[k]))

    def _lp(self, plan):
        if plan.small:
            t = self.terms
            s = 0.0
            for i in plan.term_tup:
                s += t[i]
            return s
        return self.terms[plan.term_idx].sum()

    def _lp_stash(self, plan):
        t = self.terms
        if plan.small:
            old = [t[i] for i in plan.term_tup]
            s = 0.0
            for v in old:
                s += v
            return s, old
        old = t[plan.term_idx]
        return old.sum(), old

    def _put_terms(self, plan, old):
        t = self.terms
        if plan.small:
            for i, v in zip(plan.term_tup, old):
                t[i] = v
        else:
            t[plan.term_idx] = old

    # -- cached linear predictors ------------------------------------------

    def _eta_shift(self, entries, delta, save):
        """Shift cached predictors for a scalar change; returns the undo
        slices when save is set."""
        saved = [] if save else None
        eta = self.eta
        for ni, pos, w in entries:
            arr = eta[ni]
            if type(pos) is int:
                if save:
                    saved.append((ni, pos, arr[pos]))
                arr[pos] += delta if w is None else w * delta
            elif pos is None:
                if save:
                    saved.append((ni, None, arr.copy()))
                if w is None:
                    arr += delta
                else:
                    arr += w * delta
            else:
                if save:
                    saved.append((ni, pos, arr[pos].copy()))
                if w is None:
                    arr[pos] += delta
                else:
                    arr[pos] += w * delta
        return saved

    def _eta_save(self, entries):
        saved = []
        for ni, pos, _ in entries:
            arr = self.eta[ni]
            if type(pos) is int:
                saved.append((ni, pos, arr[pos]))
            elif pos is None:
                saved.append((ni, None, arr.copy()))
            else:
                saved.append((ni, pos, arr[pos].copy()))
        return saved

    def _eta_restore(self, saved):
        if saved is None:
            return
        eta = self.eta
        for ni, pos, old in saved:
            if pos is None:
                eta[ni] = old
            else:
                eta[ni][pos] = old

    def _eta_block_save(self, plan):
        if not plan.eta_nodes:
            return None
        return [(ni, None, self.eta[ni].copy()) for ni in plan.eta_nodes]

    def _eta_block_rebuild(self, plan):
        g = self.graph
        for ni in plan.eta_nodes:
            p = g.plans[ni]
            self.eta[ni] = density.loglin_eta(p.loglin, self, None, p.shape)

    # -- mutation protocol -------------------------------------------------
    # propose writes the new value(s) and recomputes blanket terms in place;
    # restore undoes both from the stash. Committing is simply not restoring.

    def scalar_propose(self, k, x_new):
        plan = self.graph.dim_plans[k]
        t = self.terms
        if plan.small:
            tup = plan.term_tup
            old_terms = [t[i] for i in tup]
            lp_old = 0.0
            for v in old_terms:
                lp_old += v
        else:
            tup = None
            old_terms = t[plan.term_idx]
            lp_old = old_terms.sum()
        x_old = self.values[k]
        mvn_saved = self._save_mvn(plan) if plan.mvn_nodes else None
        ed = plan.eta_delta
        eta_saved = self._eta_shift(ed, x_new - x_old, True) if ed else None
        self.values[k] = x_new
        self._eval_steps(plan.steps)
        if tup is not None:
            lp_new = 0.0
            for i in tup:
                lp_new += t[i]
        else:
            lp_new = t[plan.term_idx].sum()
        return lp_old, lp_new, (x_old, old_terms, mvn_saved, eta_saved)

    def scalar_restore(self, k, stash):
        x_old, old_terms, mvn_saved, eta_saved = stash
        self.values[k] = x_old
        self._put_terms(self.graph.dim_plans[k], old_terms)
        self._restore_mvn(mvn_saved)
        self._eta_restore(eta_saved)

    def scalar_stash(self, k):
        """Snapshot for slice style probing; undo with scalar_restore."""
        plan = self.graph.dim_plans[k]
        if plan.small:
            old_terms = [self.terms[i] for i in plan.term_tup]
        else:
            old_terms = self.terms[plan.term_idx]
        mvn_saved = self._save_mvn(plan) if plan.mvn_nodes else None
        eta_saved = self._eta_save(plan.eta_delta) if plan.eta_delta else None
        return (self.values[k], old_terms, mvn_saved, eta_saved)

    def block_stash(self, dims, plan):
        if plan.small:
            old_terms = [self.terms[i] for i in plan.term_tup]
        else:
            old_terms = self.terms[plan.term_idx]
        return (self.values[dims].copy(), old_terms,
                self._save_mvn(plan) if plan.mvn_nodes else None,
                self._eta_block_save(plan))

    def scalar_set(self, k, x_new):
        """Write and recompute, no stash. For exact conditional draws."""
        plan = self.graph.dim_plans[k]
        ed = plan.eta_delta
        if ed:
            self._eta_shift(ed, x_new - self.values[k], False)
        self.values[k] = x_new
        self._eval_steps(plan.steps)

    def probe_scalar(self, k, x):
        """Slice sampling probe: write and return the new blanket sum.

        The caller owns restoration via a stash from scalar_stash."""
        plan = self.graph.dim_plans[k]
        ed = plan.eta_delta
        if ed:
            self._eta_shift(ed, x - self.values[k], False)
        self.values[k] = x
        self._eval_steps(plan.steps)
        return self._lp(plan)

    def block_propose(self, dims, plan, x_new):
        lp_old, old_terms = self._lp_stash(plan)
        old_vals = self.values[dims].copy()
        mvn_saved = self._save_mvn(plan) if plan.mvn_nodes else None
        eta_saved = self._eta_block_save(plan)
        self.values[dims] = x_new
        if plan.eta_nodes:
            self._eta_block_rebuild(plan)
        self._eval_steps(plan.steps)
        lp_new = self._lp(plan)
        return lp_old, lp_new, (old_vals, old_terms, mvn_saved, eta_saved)

    def block_restore(self, dims, plan, stash):
        old_vals, old_terms, mvn_saved, eta_saved = stash
        self.values[dims] = old_vals
        self._put_terms(plan, old_terms)
        self._restore_mvn(mvn_saved)
        self._eta_restore(eta_saved)

    def probe_block(self, dims, plan, x):
        self.values[dims] = x
        if plan.eta_nodes:
            self._eta_block_rebuild(plan)
        self._eval_steps(plan.steps)
        return float(self._lp(plan))

    def _save_mvn(self, plan):
        if not plan.mvn_nodes:
            return None
        return [(ni, self.mvn_cache.get(ni)) for ni in plan.mvn_nodes]

    def _restore_mvn(self, saved):
        if saved is None:
            return
        for ni, entry in saved:
            if entry is not None:
                self.mvn_cache[ni] = entry
