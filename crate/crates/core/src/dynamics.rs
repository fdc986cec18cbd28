//! Projected primal-dual multi-agent dynamics and a forward-Euler integrator.
//!
//! Every agent `i` owns a raw state `x̄_i`, and for each resource `j` the raw
//! auxiliaries `z̄_ij, w̄_ij`, the consensus multiplier `μ_ij`, raw resource
//! multipliers `λ̄¹_ij, λ̄²_ij` and their integral terms `y¹_ij, y²_ij`. The
//! outputs `x_i, z_ij, w_ij, λ¹_ij, λ²_ij` are projections of the raw states
//! and are refreshed after every update. An agent's derivative reads only its
//! own blocks and its neighbours' `μ, z, λ¹, λ², y¹, y²`.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{project_in_place, project_orthant_in_place, subgradient_into};
use crate::problem::RobustAllocationProblem;
use crate::scalar::Real;

/// The eight raw blocks of the stacked state, in stacking order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Block {
    Xbar,
    Zbar,
    Wbar,
    U,
    Lam1bar,
    Lam2bar,
    Y1,
    Y2,
}

impl Block {
    pub const ALL: [Block; 8] = [
        Block::Xbar,
        Block::Zbar,
        Block::Wbar,
        Block::U,
        Block::Lam1bar,
        Block::Lam2bar,
        Block::Y1,
        Block::Y2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Block::Xbar => "xbar",
            Block::Zbar => "zbar",
            Block::Wbar => "wbar",
            Block::U => "u",
            Block::Lam1bar => "lam1bar",
            Block::Lam2bar => "lam2bar",
            Block::Y1 => "y1",
            Block::Y2 => "y2",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Full swarm state: raw blocks plus cached projected outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwarmState<T> {
    pub xbar: Vec<T>,
    pub zbar: Vec<T>,
    pub wbar: Vec<T>,
    pub u: Vec<T>,
    pub lam1bar: Vec<T>,
    pub lam2bar: Vec<T>,
    pub y1: Vec<T>,
    pub y2: Vec<T>,
    pub x: Vec<T>,
    pub z: Vec<T>,
    pub w: Vec<T>,
    pub lam1: Vec<T>,
    pub lam2: Vec<T>,
}

impl<T: Real> SwarmState<T> {
    pub fn zeros(problem: &RobustAllocationProblem<T>) -> Self {
        let nq = problem.n() * problem.q();
        let mnq = nq * problem.m();
        let z = || vec![T::zero(); mnq];
        Self {
            xbar: vec![T::zero(); nq],
            zbar: z(),
            wbar: z(),
            u: z(),
            lam1bar: z(),
            lam2bar: z(),
            y1: z(),
            y2: z(),
            x: vec![T::zero(); nq],
            z: z(),
            w: z(),
            lam1: z(),
            lam2: z(),
        }
    }

    pub fn block(&self, block: Block) -> &[T] {
        match block {
            Block::Xbar => &self.xbar,
            Block::Zbar => &self.zbar,
            Block::Wbar => &self.wbar,
            Block::U => &self.u,
            Block::Lam1bar => &self.lam1bar,
            Block::Lam2bar => &self.lam2bar,
            Block::Y1 => &self.y1,
            Block::Y2 => &self.y2,
        }
    }

    pub fn block_mut(&mut self, block: Block) -> &mut Vec<T> {
        match block {
            Block::Xbar => &mut self.xbar,
            Block::Zbar => &mut self.zbar,
            Block::Wbar => &mut self.wbar,
            Block::U => &mut self.u,
            Block::Lam1bar => &mut self.lam1bar,
            Block::Lam2bar => &mut self.lam2bar,
            Block::Y1 => &mut self.y1,
            Block::Y2 => &mut self.y2,
        }
    }

    /// Recomputes `x, Z, W, Λ¹, Λ²` from the raw blocks.
    pub fn refresh_outputs(&mut self, problem: &RobustAllocationProblem<T>) {
        let q = problem.q();
        self.x.clone_from(&self.xbar);
        for (i, set) in problem.sets.iter().enumerate() {
            project_in_place(set, &mut self.x[i * q..(i + 1) * q]);
        }
        for (out, raw) in [
            (&mut self.z, &self.zbar),
            (&mut self.w, &self.wbar),
            (&mut self.lam1, &self.lam1bar),
            (&mut self.lam2, &self.lam2bar),
        ] {
            out.clone_from(raw);
            project_orthant_in_place(out);
        }
    }

    /// Checks block lengths against the problem.
    pub fn check_dimensions(&self, problem: &RobustAllocationProblem<T>) -> Result<()> {
        let nq = problem.n() * problem.q();
        let mnq = nq * problem.m();
        let fields: [(&str, usize, usize); 13] = [
            ("xbar", nq, self.xbar.len()),
            ("zbar", mnq, self.zbar.len()),
            ("wbar", mnq, self.wbar.len()),
            ("u", mnq, self.u.len()),
            ("lam1bar", mnq, self.lam1bar.len()),
            ("lam2bar", mnq, self.lam2bar.len()),
            ("y1", mnq, self.y1.len()),
            ("y2", mnq, self.y2.len()),
            ("x", nq, self.x.len()),
            ("z", mnq, self.z.len()),
            ("w", mnq, self.w.len()),
            ("lam1", mnq, self.lam1.len()),
            ("lam2", mnq, self.lam2.len()),
        ];
        for (name, expected, actual) in fields {
            if expected != actual {
                return Err(Error::DimensionMismatch {
                    context: format!("state.{name}"),
                    expected,
                    actual,
                });
            }
        }
        Ok(())
    }

    /// Stacked raw vector `Φ`.
    pub fn raw_vec(&self) -> Vec<T> {
        Block::ALL
            .iter()
            .flat_map(|&b| self.block(b).iter().copied())
            .collect()
    }
}

/// Value of the right-hand side, one vector per raw block.
#[derive(Debug, Clone, PartialEq)]
pub struct SwarmDerivative<T> {
    blocks: [Vec<T>; 8],
}

impl<T: Real> SwarmDerivative<T> {
    fn zeros(nq: usize, mnq: usize) -> Self {
        Self {
            blocks: std::array::from_fn(|b| vec![T::zero(); if b == 0 { nq } else { mnq }]),
        }
    }

    pub fn block(&self, block: Block) -> &[T] {
        &self.blocks[block.index()]
    }

    pub fn norm(&self) -> T {
        self.blocks
            .iter()
            .flat_map(|b| b.iter())
            .map(|&v| v * v)
            .sum::<T>()
            .sqrt()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.blocks.iter().flat_map(|b| b.iter().copied()).collect()
    }

    /// Agent `i`'s entries across all blocks.
    pub fn agent_entries(&self, i: usize, q: usize, mq: usize) -> Vec<T> {
        let mut out = self.blocks[0][i * q..(i + 1) * q].to_vec();
        for b in &self.blocks[1..] {
            out.extend_from_slice(&b[i * mq..(i + 1) * mq]);
        }
        out
    }
}

/// `‖(L ⊗ I) Z‖, ‖(L ⊗ I) Λ¹‖, ‖(L ⊗ I) Λ²‖`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsensusResiduals<T> {
    pub z: T,
    pub lam1: T,
    pub lam2: T,
}

impl<T: Real> ConsensusResiduals<T> {
    pub fn max(&self) -> T {
        self.z.max(self.lam1).max(self.lam2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig<T> {
    pub dt: T,
    pub t_end: T,
    /// Snapshot stride in steps.
    pub record_every: usize,
    /// Stop once `‖F(Φ)‖` drops below this value.
    pub early_stop_tol: Option<T>,
}

impl<T: Real> IntegratorConfig<T> {
    pub fn new(dt: T, t_end: T) -> Self {
        Self {
            dt,
            t_end,
            record_every: 10,
            early_stop_tol: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > T::zero()) || !self.dt.is_finite() {
            return Err(Error::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end >= self.dt) || !self.t_end.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "t_end must be at least dt, got {}",
                self.t_end
            )));
        }
        if self.record_every == 0 {
            return Err(Error::InvalidConfig("record_every must be at least 1".into()));
        }
        if let Some(tol) = self.early_stop_tol {
            if !(tol >= T::zero()) {
                return Err(Error::InvalidConfig("early_stop_tol must be nonnegative".into()));
            }
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt)
            .round()
            .to_usize()
            .expect("step count fits in usize")
    }
}

impl Default for IntegratorConfig<f64> {
    fn default() -> Self {
        Self::new(0.01, 300.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorRow<T> {
    pub g1: Vec<T>,
    pub g2: Vec<T>,
    /// `‖F(Φ)‖` at the snapshot.
    pub eq_residual: T,
    pub consensus: ConsensusResiduals<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    pub dt: T,
    pub times: Vec<T>,
    pub states: Vec<SwarmState<T>>,
    pub monitors: Vec<MonitorRow<T>>,
    pub steps: usize,
    pub stopped_early: bool,
}

impl<T: Real> Trajectory<T> {
    pub fn final_state(&self) -> &SwarmState<T> {
        self.states.last().expect("trajectory has at least one snapshot")
    }

    pub fn final_time(&self) -> T {
        *self.times.last().expect("trajectory has at least one snapshot")
    }

    /// Largest absolute entry of each raw block over all snapshots.
    pub fn block_sup_norms(&self) -> Vec<(Block, T)> {
        Block::ALL
            .iter()
            .map(|&b| {
                let sup = self
                    .states
                    .iter()
                    .flat_map(|s| s.block(b).iter())
                    .fold(T::zero(), |acc, v| acc.max(v.abs()));
                (b, sup)
            })
            .collect()
    }

    /// Writes `t, x_i_l, G1_j_l, G2_j_l, V, eq_residual, cons_Z, cons_L1, cons_L2`
    /// with one row per snapshot and 1-based indices. `V` is left empty when
    /// no Lyapunov series is given.
    pub fn write_csv<W: Write>(
        &self,
        n: usize,
        m: usize,
        q: usize,
        lyapunov: Option<&[T]>,
        mut out: W,
    ) -> io::Result<()> {
        let mut header = vec!["t".to_string()];
        for i in 1..=n {
            for l in 1..=q {
                header.push(format!("x_{i}_{l}"));
            }
        }
        for prefix in ["G1", "G2"] {
            for j in 1..=m {
                for l in 1..=q {
                    header.push(format!("{prefix}_{j}_{l}"));
                }
            }
        }
        header.extend(
            ["V", "eq_residual", "cons_Z", "cons_L1", "cons_L2"]
                .iter()
                .map(|s| s.to_string()),
        );
        writeln!(out, "{}", header.join(","))?;
        for (k, (state, mon)) in self.states.iter().zip(&self.monitors).enumerate() {
            let mut row: Vec<String> = vec![self.times[k].to_string()];
            row.extend(state.x.iter().map(|v| v.to_string()));
            row.extend(mon.g1.iter().map(|v| v.to_string()));
            row.extend(mon.g2.iter().map(|v| v.to_string()));
            row.push(lyapunov.map(|v| v[k].to_string()).unwrap_or_default());
            row.push(mon.eq_residual.to_string());
            row.push(mon.consensus.z.to_string());
            row.push(mon.consensus.lam1.to_string());
            row.push(mon.consensus.lam2.to_string());
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// The dynamics bound to one problem instance, with neighbour lists cached.
pub struct Dynamics<'p, T> {
    problem: &'p RobustAllocationProblem<T>,
    neighbors: Vec<Vec<(usize, T)>>,
}

impl<'p, T: Real> Dynamics<'p, T> {
    pub fn new(problem: &'p RobustAllocationProblem<T>) -> Result<Self> {
        problem.check_dimensions()?;
        let neighbors = (0..problem.n())
            .map(|i| problem.graph.neighbors(i).collect())
            .collect();
        Ok(Self { problem, neighbors })
    }

    pub fn problem(&self) -> &RobustAllocationProblem<T> {
        self.problem
    }

    /// `Σ_k α_ik (v_i − v_k)` for agent `i`'s block of length `mq`.
    fn local_laplacian(&self, i: usize, v: &[T], mq: usize, out: &mut [T]) {
        out.iter_mut().for_each(|o| *o = T::zero());
        let own = &v[i * mq..(i + 1) * mq];
        for &(k, w) in &self.neighbors[i] {
            let other = &v[k * mq..(k + 1) * mq];
            for c in 0..mq {
                out[c] = out[c] + w * (own[c] - other[c]);
            }
        }
    }

    fn agent_field(&self, i: usize, s: &SwarmState<T>, out: &mut SwarmDerivative<T>) {
        let p = self.problem;
        let (n, m, q) = (p.n(), p.m(), p.q());
        let mq = m * q;
        let c = &p.constraints;
        let nt = T::from_usize_lossy(n);

        let mut lap_u = vec![T::zero(); mq];
        let mut lap_z = vec![T::zero(); mq];
        let mut lap_l1 = vec![T::zero(); mq];
        let mut lap_l2 = vec![T::zero(); mq];
        let mut lap_y1 = vec![T::zero(); mq];
        let mut lap_y2 = vec![T::zero(); mq];
        self.local_laplacian(i, &s.u, mq, &mut lap_u);
        self.local_laplacian(i, &s.z, mq, &mut lap_z);
        self.local_laplacian(i, &s.lam1, mq, &mut lap_l1);
        self.local_laplacian(i, &s.lam2, mq, &mut lap_l2);
        self.local_laplacian(i, &s.y1, mq, &mut lap_y1);
        self.local_laplacian(i, &s.y2, mq, &mut lap_y2);

        let xi = &s.x[i * q..(i + 1) * q];
        let mut fx = vec![T::zero(); q];
        subgradient_into(&p.objectives[i], xi, &mut fx);

        for l in 0..q {
            let mut coupling = T::zero();
            for j in 0..m {
                let k = c.idx(i, j, l);
                coupling = coupling + c.a[k] * s.lam1[k] + c.ahat[k] * s.lam2[k];
            }
            let r = i * q + l;
            out.blocks[0][r] = -s.xbar[r] + s.x[r] - fx[l] - coupling;
        }

        for j in 0..m {
            let g = c.gamma_scalar(j) / nt;
            for l in 0..q {
                let k = c.idx(i, j, l);
                let local = j * q + l;
                let x = xi[l];
                let h1 = c.a[k] * x + g * s.z[k] + s.w[k] - c.b[k];
                let h2 = c.ahat[k] * x - s.z[k] - s.w[k];
                out.blocks[1][k] = -s.zbar[k] + s.z[k] - g * s.lam1[k] + s.lam2[k] - lap_u[local];
                out.blocks[2][k] = -s.wbar[k] + s.w[k] - s.lam1[k] + s.lam2[k];
                out.blocks[3][k] = lap_z[local];
                out.blocks[4][k] = -s.lam1bar[k] + s.lam1[k] + h1 + lap_y1[local] - lap_l1[local];
                out.blocks[5][k] = -s.lam2bar[k] + s.lam2[k] + h2 + lap_y2[local] - lap_l2[local];
                out.blocks[6][k] = -lap_l1[local];
                out.blocks[7][k] = -lap_l2[local];
            }
        }
    }

    /// Right-hand side `F(Φ)` with the deterministic subgradient selection.
    pub fn vector_field(&self, state: &SwarmState<T>) -> Result<SwarmDerivative<T>> {
        state.check_dimensions(self.problem)?;
        let nq = self.problem.n() * self.problem.q();
        let mut out = SwarmDerivative::zeros(nq, nq * self.problem.m());
        for i in 0..self.problem.n() {
            self.agent_field(i, state, &mut out);
        }
        Ok(out)
    }

    fn apply(&self, state: &mut SwarmState<T>, field: &SwarmDerivative<T>, dt: T, time: T) -> Result<()> {
        for b in Block::ALL {
            let d = field.block(b);
            let raw = state.block_mut(b);
            for (r, &v) in raw.iter_mut().zip(d) {
                *r = *r + dt * v;
            }
            if raw.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence {
                    block: b.name(),
                    time: time.to_f64().unwrap_or(f64::NAN),
                });
            }
        }
        state.refresh_outputs(self.problem);
        Ok(())
    }

    /// One explicit Euler step of length `dt`.
    pub fn step(&self, state: &SwarmState<T>, dt: T) -> Result<SwarmState<T>> {
        if !(dt > T::zero()) || !dt.is_finite() {
            return Err(Error::InvalidConfig(format!("dt must be positive, got {dt}")));
        }
        let field = self.vector_field(state)?;
        let mut next = state.clone();
        self.apply(&mut next, &field, dt, dt)?;
        Ok(next)
    }

    pub fn consensus(&self, state: &SwarmState<T>) -> ConsensusResiduals<T> {
        let mq = self.problem.m() * self.problem.q();
        let mut buf = vec![T::zero(); mq];
        let mut norm_of = |v: &[T]| {
            let mut sq = T::zero();
            for i in 0..self.problem.n() {
                self.local_laplacian(i, v, mq, &mut buf);
                sq = sq + buf.iter().map(|&b| b * b).sum::<T>();
            }
            sq.sqrt()
        };
        ConsensusResiduals {
            z: norm_of(&state.z),
            lam1: norm_of(&state.lam1),
            lam2: norm_of(&state.lam2),
        }
    }

    fn monitor(&self, state: &SwarmState<T>, field: &SwarmDerivative<T>) -> MonitorRow<T> {
        let p = self.problem;
        let (n, m, q) = (p.n(), p.m(), p.q());
        let c = &p.constraints;
        let nt = T::from_usize_lossy(n);
        let mut g1 = vec![T::zero(); m * q];
        let mut g2 = vec![T::zero(); m * q];
        for i in 0..n {
            for j in 0..m {
                let g = c.gamma_scalar(j) / nt;
                for l in 0..q {
                    let k = c.idx(i, j, l);
                    let x = state.x[i * q + l];
                    g1[j * q + l] = g1[j * q + l] + c.a[k] * x + g * state.z[k] + state.w[k] - c.b[k];
                    g2[j * q + l] = g2[j * q + l] + c.ahat[k] * x - state.z[k] - state.w[k];
                }
            }
        }
        MonitorRow {
            g1,
            g2,
            eq_residual: field.norm(),
            consensus: self.consensus(state),
        }
    }

    /// Integrates from `init` to `config.t_end`, recording every
    /// `record_every` steps and always the final state.
    pub fn simulate(&self, init: &SwarmState<T>, config: &IntegratorConfig<T>) -> Result<Trajectory<T>> {
        config.validate()?;
        init.check_dimensions(self.problem)?;
        let steps = config.steps();
        let mut state = init.clone();
        state.refresh_outputs(self.problem);
        let mut traj = Trajectory {
            dt: config.dt,
            times: Vec::new(),
            states: Vec::new(),
            monitors: Vec::new(),
            steps: 0,
            stopped_early: false,
        };
        let time_at = |k: usize| T::from_usize_lossy(k) * config.dt;
        let mut k = 0;
        loop {
            let field = self.vector_field(&state)?;
            let done = k == steps;
            let converged = config
                .early_stop_tol
                .is_some_and(|tol| field.norm() < tol);
            if k % config.record_every == 0 || done || converged {
                traj.times.push(time_at(k));
                traj.monitors.push(self.monitor(&state, &field));
                traj.states.push(state.clone());
            }
            if done || converged {
                traj.stopped_early = converged && !done;
                break;
            }
            self.apply(&mut state, &field, config.dt, time_at(k + 1))?;
            k += 1;
        }
        traj.steps = k;
        Ok(traj)
    }
}

pub fn vector_field<T: Real>(
    problem: &RobustAllocationProblem<T>,
    state: &SwarmState<T>,
) -> Result<SwarmDerivative<T>> {
    Dynamics::new(problem)?.vector_field(state)
}

pub fn step<T: Real>(problem: &RobustAllocationProblem<T>, state: &SwarmState<T>, dt: T) -> Result<SwarmState<T>> {
    Dynamics::new(problem)?.step(state, dt)
}

pub fn simulate<T: Real>(
    problem: &RobustAllocationProblem<T>,
    init: &SwarmState<T>,
    config: &IntegratorConfig<T>,
) -> Result<Trajectory<T>> {
    Dynamics::new(problem)?.simulate(init, config)
}

/// Raw positions at the configured initial values, every other block zero.
pub fn default_init<T: Real>(problem: &RobustAllocationProblem<T>) -> SwarmState<T> {
    let mut state = SwarmState::zeros(problem);
    state.xbar = problem.initial_positions.iter().flatten().copied().collect();
    state.refresh_outputs(problem);
    state
}
