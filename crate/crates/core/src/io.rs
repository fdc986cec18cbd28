//! JSON documents for problems, swarm states and oracle solutions.
//!
//! Every document carries `format_version`, currently [`FORMAT_VERSION`].
//! Serialization goes through `serde_json::to_string_pretty`, so dumping a
//! parsed dump reproduces it byte for byte.

use serde::{Deserialize, Serialize};

use crate::dynamics::SwarmState;
use crate::error::{Error, Result};
use crate::geometry::{project, ProjectionTarget};
use crate::oracle::OracleSolution;
use crate::problem::{CommGraph, LocalSet, ObjectiveSpec, RobustAllocationProblem, UncertainConstraintData};
use crate::scalar::{dist2, Real};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentDocument<T> {
    /// Diagonal of `A_ij`, one row per resource `j`.
    #[serde(rename = "A")]
    pub a: Vec<Vec<T>>,
    #[serde(rename = "Ahat")]
    pub ahat: Vec<Vec<T>>,
    pub b: Vec<Vec<T>>,
    pub set: LocalSet<T>,
    pub objective: ObjectiveSpec<T>,
    /// Raw initial position; defaults to the ball centre or the projection of the origin.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDocument<T> {
    pub adjacency: Vec<Vec<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemDocument<T> {
    pub format_version: u32,
    pub n: usize,
    pub m: usize,
    pub q: usize,
    pub gamma: Vec<usize>,
    pub agents: Vec<AgentDocument<T>>,
    pub graph: GraphDocument<T>,
    /// Aggregate right-hand sides `b_j`, one row per resource.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_aggregate: Option<Vec<Vec<T>>>,
}

fn check_version(found: u32) -> Result<()> {
    if found != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported format_version {found}, expected {FORMAT_VERSION}"
        )));
    }
    Ok(())
}

fn check_len(path: &str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch {
            context: path.to_string(),
            expected,
            actual,
        });
    }
    Ok(())
}

fn default_position<T: Real>(set: &LocalSet<T>, q: usize) -> Vec<T> {
    match set {
        LocalSet::Ball { center, .. } => center.clone(),
        _ => {
            let mut origin = vec![T::zero(); q];
            if let Ok(p) = project(ProjectionTarget::Local(set), &origin) {
                origin = p;
            }
            origin
        }
    }
}

impl<T: Real> ProblemDocument<T> {
    pub fn from_problem(problem: &RobustAllocationProblem<T>) -> Self {
        let (n, m, q) = (problem.n(), problem.m(), problem.q());
        let c = &problem.constraints;
        let rows = |v: &[T], i: usize| -> Vec<Vec<T>> {
            (0..m)
                .map(|j| (0..q).map(|l| v[c.idx(i, j, l)]).collect())
                .collect()
        };
        let agents = (0..n)
            .map(|i| AgentDocument {
                a: rows(&c.a, i),
                ahat: rows(&c.ahat, i),
                b: rows(&c.b, i),
                set: problem.sets[i].clone(),
                objective: problem.objectives[i].clone(),
                x0: Some(problem.initial_positions[i].clone()),
            })
            .collect();
        Self {
            format_version: FORMAT_VERSION,
            n,
            m,
            q,
            gamma: c.gamma.clone(),
            agents,
            graph: GraphDocument {
                adjacency: problem.graph.adjacency().to_vec(),
            },
            b_aggregate: c
                .b_aggregate
                .as_ref()
                .map(|agg| agg.chunks(q.max(1)).map(|r| r.to_vec()).collect()),
        }
    }

    /// Builds the problem, reporting the first malformed field by path.
    pub fn into_problem(self) -> Result<RobustAllocationProblem<T>> {
        check_version(self.format_version)?;
        let (n, m, q) = (self.n, self.m, self.q);
        check_len("gamma", m, self.gamma.len())?;
        check_len("agents", n, self.agents.len())?;
        let mut c = UncertainConstraintData::zeros(n, m, q);
        c.gamma = self.gamma;
        let mut sets = Vec::with_capacity(n);
        let mut objectives = Vec::with_capacity(n);
        let mut initial_positions = Vec::with_capacity(n);
        for (i, agent) in self.agents.into_iter().enumerate() {
            for (name, rows, target) in [
                ("A", &agent.a, &mut c.a),
                ("Ahat", &agent.ahat, &mut c.ahat),
                ("b", &agent.b, &mut c.b),
            ] {
                check_len(&format!("agents[{i}].{name}"), m, rows.len())?;
                for (j, row) in rows.iter().enumerate() {
                    check_len(&format!("agents[{i}].{name}[{j}]"), q, row.len())?;
                    for (l, &v) in row.iter().enumerate() {
                        target[(i * m + j) * q + l] = v;
                    }
                }
            }
            if let Some(d) = agent.set.dim() {
                check_len(&format!("agents[{i}].set"), q, d)?;
            }
            if let LocalSet::Box { upper, .. } = &agent.set {
                check_len(&format!("agents[{i}].set.upper"), q, upper.len())?;
            }
            check_len(&format!("agents[{i}].objective.p"), q, agent.objective.anchor().len())?;
            let x0 = match agent.x0 {
                Some(x0) => {
                    check_len(&format!("agents[{i}].x0"), q, x0.len())?;
                    x0
                }
                None => default_position(&agent.set, q),
            };
            sets.push(agent.set);
            objectives.push(agent.objective);
            initial_positions.push(x0);
        }
        if let Some(agg) = self.b_aggregate {
            check_len("b_aggregate", m, agg.len())?;
            for (j, row) in agg.iter().enumerate() {
                check_len(&format!("b_aggregate[{j}]"), q, row.len())?;
            }
            c.b_aggregate = Some(agg.into_iter().flatten().collect());
        }
        check_len("graph.adjacency", n, self.graph.adjacency.len())?;
        let graph = CommGraph::new(self.graph.adjacency)?;
        let problem = RobustAllocationProblem {
            graph,
            constraints: c,
            sets,
            objectives,
            initial_positions,
        };
        problem.check_dimensions()?;
        Ok(problem)
    }
}

fn to_pretty<S: Serialize>(doc: &S) -> Result<String> {
    serde_json::to_string_pretty(doc).map_err(|e| Error::Format(e.to_string()))
}

fn parse<D: serde::de::DeserializeOwned>(text: &str) -> Result<D> {
    serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))
}

pub fn problem_to_json<T: Real>(problem: &RobustAllocationProblem<T>) -> Result<String> {
    to_pretty(&ProblemDocument::from_problem(problem))
}

pub fn problem_from_json<T: Real>(text: &str) -> Result<RobustAllocationProblem<T>> {
    parse::<ProblemDocument<T>>(text)?.into_problem()
}

/// Projected outputs plus the unprojected multiplier `U`, all stacked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputBlocks<T> {
    pub x: Vec<T>,
    pub z: Vec<T>,
    pub w: Vec<T>,
    pub u: Vec<T>,
    pub lam1: Vec<T>,
    pub lam2: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawBlocks<T> {
    pub xbar: Vec<T>,
    pub zbar: Vec<T>,
    pub wbar: Vec<T>,
    pub lam1bar: Vec<T>,
    pub lam2bar: Vec<T>,
    pub y1: Vec<T>,
    pub y2: Vec<T>,
}

/// Swarm state dump. Vectors use the stacked layouts: `x` is indexed
/// `i * q + l`, the per-resource blocks `(i * m + j) * q + l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateDocument<T> {
    pub format_version: u32,
    pub n: usize,
    pub m: usize,
    pub q: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<T>,
    pub outputs: OutputBlocks<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<RawBlocks<T>>,
}

impl<T: Real> StateDocument<T> {
    pub fn from_state(problem: &RobustAllocationProblem<T>, state: &SwarmState<T>, time: Option<T>) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            n: problem.n(),
            m: problem.m(),
            q: problem.q(),
            time,
            outputs: OutputBlocks {
                x: state.x.clone(),
                z: state.z.clone(),
                w: state.w.clone(),
                u: state.u.clone(),
                lam1: state.lam1.clone(),
                lam2: state.lam2.clone(),
            },
            raw: Some(RawBlocks {
                xbar: state.xbar.clone(),
                zbar: state.zbar.clone(),
                wbar: state.wbar.clone(),
                lam1bar: state.lam1bar.clone(),
                lam2bar: state.lam2bar.clone(),
                y1: state.y1.clone(),
                y2: state.y2.clone(),
            }),
        }
    }

    /// Rebuilds a state, rejecting outputs outside their feasible sets. With
    /// no raw blocks, each raw block is taken equal to its output and `Y = 0`.
    pub fn into_state(self, problem: &RobustAllocationProblem<T>) -> Result<SwarmState<T>> {
        check_version(self.format_version)?;
        check_len("n", problem.n(), self.n)?;
        check_len("m", problem.m(), self.m)?;
        check_len("q", problem.q(), self.q)?;
        let q = problem.q();
        let o = self.outputs;
        for (name, v) in [("z", &o.z), ("w", &o.w), ("lam1", &o.lam1), ("lam2", &o.lam2)] {
            if let Some((k, &bad)) = v.iter().enumerate().find(|(_, &v)| !(v >= T::zero())) {
                return Err(Error::InvalidState(format!(
                    "outputs.{name}[{k}] = {bad} lies outside the nonnegative orthant"
                )));
            }
        }
        if let Some((k, _)) = o.x.iter().chain(&o.u).enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidState(format!("non-finite entry {k} in outputs.x/u")));
        }
        let mut state = SwarmState::zeros(problem);
        match self.raw {
            Some(r) => {
                state.xbar = r.xbar;
                state.zbar = r.zbar;
                state.wbar = r.wbar;
                state.lam1bar = r.lam1bar;
                state.lam2bar = r.lam2bar;
                state.y1 = r.y1;
                state.y2 = r.y2;
            }
            None => {
                state.xbar.clone_from(&o.x);
                state.zbar.clone_from(&o.z);
                state.wbar.clone_from(&o.w);
                state.lam1bar.clone_from(&o.lam1);
                state.lam2bar.clone_from(&o.lam2);
            }
        }
        state.u = o.u;
        state.x = o.x;
        state.z = o.z;
        state.w = o.w;
        state.lam1 = o.lam1;
        state.lam2 = o.lam2;
        state.check_dimensions(problem)?;
        let slack = T::lit(1e-9);
        for i in 0..problem.n() {
            let xi = &state.x[i * q..(i + 1) * q];
            let back = project(ProjectionTarget::Local(&problem.sets[i]), xi)?;
            let scale = T::one() + xi.iter().fold(T::zero(), |a, v| a.max(v.abs()));
            if dist2(&back, xi) > slack * scale {
                return Err(Error::InvalidState(format!(
                    "outputs.x for agent {i} lies outside its local set"
                )));
            }
        }
        Ok(state)
    }
}

pub fn state_to_json<T: Real>(
    problem: &RobustAllocationProblem<T>,
    state: &SwarmState<T>,
    time: Option<T>,
) -> Result<String> {
    to_pretty(&StateDocument::from_state(problem, state, time))
}

pub fn state_from_json<T: Real>(problem: &RobustAllocationProblem<T>, text: &str) -> Result<SwarmState<T>> {
    parse::<StateDocument<T>>(text)?.into_state(problem)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleDocument<T> {
    pub format_version: u32,
    #[serde(flatten)]
    pub solution: OracleSolution<T>,
}

pub fn oracle_to_json<T: Real>(solution: &OracleSolution<T>) -> Result<String> {
    to_pretty(&OracleDocument {
        format_version: FORMAT_VERSION,
        solution: solution.clone(),
    })
}

pub fn oracle_from_json<T: Real>(text: &str) -> Result<OracleSolution<T>> {
    let doc: OracleDocument<T> = parse(text)?;
    check_version(doc.format_version)?;
    Ok(doc.solution)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::default_init;
    use crate::problem::demo_problem;

    #[test]
    fn demo_round_trip_is_byte_stable() {
        let p = demo_problem::<f64>();
        let text = problem_to_json(&p).unwrap();
        let back: RobustAllocationProblem<f64> = problem_from_json(&text).unwrap();
        assert_eq!(back, p);
        assert_eq!(problem_to_json(&back).unwrap(), text);
    }

    #[test]
    fn demo_document_fields() {
        let doc = ProblemDocument::from_problem(&demo_problem::<f64>());
        assert_eq!(doc.gamma, vec![2, 2]);
        assert_eq!(doc.agents[0].b[0], vec![-15.0, -5.0]);
        assert_eq!(doc.agents[0].a[0], vec![0.1, 0.1]);
    }

    #[test]
    fn wrong_row_length_names_the_field() {
        let mut doc = ProblemDocument::from_problem(&demo_problem::<f64>());
        doc.agents[2].ahat[1].pop();
        let err = doc.into_problem().unwrap_err();
        assert!(err.to_string().contains("agents[2].Ahat[1]"), "{err}");
    }

    #[test]
    fn missing_x0_defaults_to_ball_centre() {
        let mut doc = ProblemDocument::from_problem(&demo_problem::<f64>());
        doc.agents.iter_mut().for_each(|a| a.x0 = None);
        let p = doc.into_problem().unwrap();
        assert_eq!(p.initial_positions[1], vec![17.0, 15.0]);
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let mut doc = ProblemDocument::from_problem(&demo_problem::<f64>());
        doc.format_version = 2;
        assert!(matches!(doc.into_problem(), Err(Error::Format(_))));
    }

    #[test]
    fn state_round_trip_and_orthant_check() {
        let p = demo_problem::<f64>();
        let s = default_init(&p);
        let text = state_to_json(&p, &s, Some(0.0)).unwrap();
        assert_eq!(state_from_json(&p, &text).unwrap(), s);

        let mut doc: StateDocument<f64> = serde_json::from_str(&text).unwrap();
        doc.outputs.z[0] = -1.0;
        let err = doc.into_state(&p).unwrap_err();
        assert!(matches!(err, Error::InvalidState(_)));
        assert!(err.to_string().contains("outputs.z[0]"));
    }

    #[test]
    fn state_outside_local_set_is_rejected() {
        let p = demo_problem::<f64>();
        let mut doc = StateDocument::from_state(&p, &default_init(&p), None);
        doc.outputs.x[0] = 100.0;
        assert!(matches!(doc.into_state(&p), Err(Error::InvalidState(_))));
    }
}
