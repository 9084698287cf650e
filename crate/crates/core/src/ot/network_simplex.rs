//! Primal network simplex for the dense transportation problem.
//!
//! The spanning-tree bookkeeping (thread / reverse-thread lists, successor
//! counts, last successors) follows the LEMON `NetworkSimplex` design with the
//! block-search pivot rule. Arc capacities are unbounded, supplies are
//! integers and costs are `f64`, so flows stay exact while reduced costs carry
//! a relative tolerance.

use ndarray::ArrayView2;

use crate::error::{Error, Result};

const NONE: usize = usize::MAX;
const INF: i64 = i64::MAX;

const STATE_TREE: i8 = 0;
const STATE_LOWER: i8 = 1;

const DIR_UP: i8 = 1;
const DIR_DOWN: i8 = -1;

const REDUCED_COST_EPS: f64 = 1e-13;
const MIN_BLOCK_SIZE: usize = 10;

struct Solver {
    node_num: usize,
    search_arc_num: usize,

    source: Vec<usize>,
    target: Vec<usize>,
    cost: Vec<f64>,
    flow: Vec<i64>,
    state: Vec<i8>,

    pi: Vec<f64>,
    parent: Vec<usize>,
    pred: Vec<usize>,
    thread: Vec<usize>,
    rev_thread: Vec<usize>,
    succ_num: Vec<usize>,
    last_succ: Vec<usize>,
    pred_dir: Vec<i8>,
    dirty_revs: Vec<usize>,

    in_arc: usize,
    join: usize,
    u_in: usize,
    v_in: usize,
    u_out: usize,
    delta: i64,

    block_size: usize,
    next_arc: usize,
}

impl Solver {
    fn new(cost: ArrayView2<'_, f64>, supply: &[i64], demand: &[i64]) -> Self {
        let (n, m) = cost.dim();
        let node_num = n + m;
        let arc_num = n * m;
        let all_arc_num = arc_num + node_num;
        let root = node_num;

        let mut source = vec![0; all_arc_num];
        let mut target = vec![0; all_arc_num];
        let mut arc_cost = vec![0.0; all_arc_num];
        let mut max_cost = 0.0f64;
        for i in 0..n {
            for j in 0..m {
                let e = i * m + j;
                source[e] = i;
                target[e] = n + j;
                let c = cost[[i, j]];
                arc_cost[e] = c;
                max_cost = max_cost.max(c.abs());
            }
        }
        let art_cost = (max_cost + 1.0) * node_num as f64;

        let mut node_supply = vec![0i64; node_num + 1];
        node_supply[..n].copy_from_slice(supply);
        for (j, &d) in demand.iter().enumerate() {
            node_supply[n + j] = -d;
        }

        let mut s = Solver {
            node_num,
            search_arc_num: arc_num,
            source,
            target,
            cost: arc_cost,
            flow: vec![0; all_arc_num],
            state: vec![STATE_LOWER; all_arc_num],
            pi: vec![0.0; node_num + 1],
            parent: vec![NONE; node_num + 1],
            pred: vec![NONE; node_num + 1],
            thread: vec![0; node_num + 1],
            rev_thread: vec![0; node_num + 1],
            succ_num: vec![0; node_num + 1],
            last_succ: vec![0; node_num + 1],
            pred_dir: vec![0; node_num + 1],
            dirty_revs: Vec::new(),
            in_arc: 0,
            join: 0,
            u_in: 0,
            v_in: 0,
            u_out: 0,
            delta: 0,
            block_size: ((arc_num as f64).sqrt() as usize).max(MIN_BLOCK_SIZE),
            next_arc: 0,
        };

        s.thread[root] = 0;
        s.rev_thread[0] = root;
        s.succ_num[root] = node_num + 1;
        s.last_succ[root] = root - 1;

        // Artificial arcs connect every node to the root and form the initial
        // spanning tree.
        for u in 0..node_num {
            let e = arc_num + u;
            s.parent[u] = root;
            s.pred[u] = e;
            s.thread[u] = u + 1;
            s.rev_thread[u + 1] = u;
            s.succ_num[u] = 1;
            s.last_succ[u] = u;
            s.state[e] = STATE_TREE;
            if node_supply[u] >= 0 {
                s.pred_dir[u] = DIR_UP;
                s.pi[u] = 0.0;
                s.source[e] = u;
                s.target[e] = root;
                s.flow[e] = node_supply[u];
                s.cost[e] = 0.0;
            } else {
                s.pred_dir[u] = DIR_DOWN;
                s.pi[u] = art_cost;
                s.source[e] = root;
                s.target[e] = u;
                s.flow[e] = -node_supply[u];
                s.cost[e] = art_cost;
            }
        }
        s
    }

    #[inline]
    fn reduced_cost(&self, e: usize) -> (f64, f64) {
        let ps = self.pi[self.source[e]];
        let pt = self.pi[self.target[e]];
        let c = self.cost[e];
        let rc = self.state[e] as f64 * (c + ps - pt);
        let scale = c.abs() + ps.abs() + pt.abs();
        (rc, scale)
    }

    fn find_entering_arc(&mut self) -> bool {
        let mut min = 0.0;
        let mut cnt = self.block_size;
        let mut found = false;
        let arcs = (self.next_arc..self.search_arc_num).chain(0..self.next_arc);
        for e in arcs {
            let (rc, scale) = self.reduced_cost(e);
            if rc < min && rc < -REDUCED_COST_EPS * scale {
                min = rc;
                self.in_arc = e;
                found = true;
            }
            cnt -= 1;
            if cnt == 0 {
                if found {
                    self.next_arc = e + 1;
                    if self.next_arc == self.search_arc_num {
                        self.next_arc = 0;
                    }
                    return true;
                }
                cnt = self.block_size;
            }
        }
        found
    }

    fn find_join_node(&mut self) {
        let mut u = self.source[self.in_arc];
        let mut v = self.target[self.in_arc];
        while u != v {
            if self.succ_num[u] < self.succ_num[v] {
                u = self.parent[u];
            } else {
                v = self.parent[v];
            }
        }
        self.join = u;
    }

    fn find_leaving_arc(&mut self) -> bool {
        let (first, second) = if self.state[self.in_arc] == STATE_LOWER {
            (self.source[self.in_arc], self.target[self.in_arc])
        } else {
            (self.target[self.in_arc], self.source[self.in_arc])
        };
        self.delta = INF;
        let mut result = 0;

        let mut u = first;
        while u != self.join {
            let e = self.pred[u];
            let d = if self.pred_dir[u] == DIR_DOWN {
                INF
            } else {
                self.flow[e]
            };
            if d < self.delta {
                self.delta = d;
                self.u_out = u;
                result = 1;
            }
            u = self.parent[u];
        }
        let mut u = second;
        while u != self.join {
            let e = self.pred[u];
            let d = if self.pred_dir[u] == DIR_UP {
                INF
            } else {
                self.flow[e]
            };
            if d <= self.delta {
                self.delta = d;
                self.u_out = u;
                result = 2;
            }
            u = self.parent[u];
        }

        if result == 1 {
            self.u_in = first;
            self.v_in = second;
        } else {
            self.u_in = second;
            self.v_in = first;
        }
        result != 0
    }

    fn change_flow(&mut self) {
        if self.delta > 0 {
            let val = self.state[self.in_arc] as i64 * self.delta;
            self.flow[self.in_arc] += val;
            let mut u = self.source[self.in_arc];
            while u != self.join {
                self.flow[self.pred[u]] -= self.pred_dir[u] as i64 * val;
                u = self.parent[u];
            }
            let mut u = self.target[self.in_arc];
            while u != self.join {
                self.flow[self.pred[u]] += self.pred_dir[u] as i64 * val;
                u = self.parent[u];
            }
        }
        self.state[self.in_arc] = STATE_TREE;
        let out_arc = self.pred[self.u_out];
        self.state[out_arc] = STATE_LOWER;
    }

    fn update_tree_structure(&mut self) {
        let u_in = self.u_in;
        let v_in = self.v_in;
        let u_out = self.u_out;
        let join = self.join;
        let in_arc = self.in_arc;

        let old_rev_thread = self.rev_thread[u_out];
        let old_succ_num = self.succ_num[u_out];
        let old_last_succ = self.last_succ[u_out];
        let v_out = self.parent[u_out];

        if u_in == u_out {
            self.parent[u_in] = v_in;
            self.pred[u_in] = in_arc;
            self.pred_dir[u_in] = if u_in == self.source[in_arc] {
                DIR_UP
            } else {
                DIR_DOWN
            };

            if self.thread[v_in] != u_out {
                let mut after = self.thread[old_last_succ];
                self.thread[old_rev_thread] = after;
                self.rev_thread[after] = old_rev_thread;
                after = self.thread[v_in];
                self.thread[v_in] = u_out;
                self.rev_thread[u_out] = v_in;
                self.thread[old_last_succ] = after;
                self.rev_thread[after] = old_last_succ;
            }
        } else {
            let thread_continue = if old_rev_thread == v_in {
                self.thread[old_last_succ]
            } else {
                self.thread[v_in]
            };

            // Re-hang the stem between u_in and u_out.
            let mut stem = u_in;
            let mut par_stem = v_in;
            let mut last = self.last_succ[u_in];
            let mut after = self.thread[last];
            self.thread[v_in] = u_in;
            self.dirty_revs.clear();
            self.dirty_revs.push(v_in);
            while stem != u_out {
                let next_stem = self.parent[stem];
                self.thread[last] = next_stem;
                self.dirty_revs.push(last);

                let before = self.rev_thread[stem];
                self.thread[before] = after;
                self.rev_thread[after] = before;

                self.parent[stem] = par_stem;
                par_stem = stem;
                stem = next_stem;

                last = if self.last_succ[stem] == self.last_succ[par_stem] {
                    self.rev_thread[par_stem]
                } else {
                    self.last_succ[stem]
                };
                after = self.thread[last];
            }
            self.parent[u_out] = par_stem;
            self.thread[last] = thread_continue;
            self.rev_thread[thread_continue] = last;
            self.last_succ[u_out] = last;

            if old_rev_thread != v_in {
                self.thread[old_rev_thread] = after;
                self.rev_thread[after] = old_rev_thread;
            }

            for i in 0..self.dirty_revs.len() {
                let u = self.dirty_revs[i];
                let t = self.thread[u];
                self.rev_thread[t] = u;
            }

            let mut tmp_sc = 0isize;
            let tmp_ls = self.last_succ[u_out];
            let mut u = u_out;
            while u != u_in {
                let p = self.parent[u];
                self.pred[u] = self.pred[p];
                self.pred_dir[u] = -self.pred_dir[p];
                tmp_sc += self.succ_num[u] as isize - self.succ_num[p] as isize;
                self.succ_num[u] = tmp_sc as usize;
                self.last_succ[p] = tmp_ls;
                u = p;
            }
            self.pred[u_in] = in_arc;
            self.pred_dir[u_in] = if u_in == self.source[in_arc] {
                DIR_UP
            } else {
                DIR_DOWN
            };
            self.succ_num[u_in] = old_succ_num;
        }

        let up_limit_out = if self.last_succ[join] == v_in {
            join
        } else {
            NONE
        };
        let last_succ_out = self.last_succ[u_out];
        let mut u = v_in;
        while u != NONE && self.last_succ[u] == v_in {
            self.last_succ[u] = last_succ_out;
            u = self.parent[u];
        }

        if join != old_rev_thread && v_in != old_rev_thread {
            let mut u = v_out;
            while u != up_limit_out && self.last_succ[u] == old_last_succ {
                self.last_succ[u] = old_rev_thread;
                u = self.parent[u];
            }
        } else if last_succ_out != old_last_succ {
            let mut u = v_out;
            while u != up_limit_out && self.last_succ[u] == old_last_succ {
                self.last_succ[u] = last_succ_out;
                u = self.parent[u];
            }
        }

        let mut u = v_in;
        while u != join {
            self.succ_num[u] += old_succ_num;
            u = self.parent[u];
        }
        let mut u = v_out;
        while u != join {
            self.succ_num[u] -= old_succ_num;
            u = self.parent[u];
        }
    }

    fn update_potential(&mut self) {
        let dir = self.pred_dir[self.u_in] as f64;
        let sigma = self.pi[self.v_in] - self.pi[self.u_in] - dir * self.cost[self.in_arc];
        let end = self.thread[self.last_succ[self.u_in]];
        let mut u = self.u_in;
        while u != end {
            self.pi[u] += sigma;
            u = self.thread[u];
        }
    }

    fn run(&mut self) -> Result<()> {
        while self.find_entering_arc() {
            self.find_join_node();
            if !self.find_leaving_arc() {
                return Err(Error::Solver("unbounded cycle"));
            }
            self.change_flow();
            self.update_tree_structure();
            self.update_potential();
        }
        let artificial = self.search_arc_num..self.search_arc_num + self.node_num;
        if self.flow[artificial].iter().any(|&f| f != 0) {
            return Err(Error::Solver("infeasible supplies"));
        }
        Ok(())
    }
}

/// Minimum-cost flow on the complete bipartite graph `rows -> cols`.
///
/// `supply` and `demand` must be positive and sum to the same total. Returns
/// the integer flow on every arc, row-major `n x m`.
pub(crate) fn solve_transportation(
    cost: ArrayView2<'_, f64>,
    supply: &[i64],
    demand: &[i64],
) -> Result<Vec<i64>> {
    let (n, m) = cost.dim();
    debug_assert_eq!(supply.len(), n);
    debug_assert_eq!(demand.len(), m);
    debug_assert_eq!(supply.iter().sum::<i64>(), demand.iter().sum::<i64>());

    let mut solver = Solver::new(cost, supply, demand);
    solver.run()?;
    solver.flow.truncate(n * m);
    Ok(solver.flow)
}
