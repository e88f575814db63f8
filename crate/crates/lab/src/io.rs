//! File formats: MDP and policy JSON, JSONL datasets, builtin instances and
//! policy names.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use aope_core::instances::{toy2x2, tree_mdp, TreeRewards};
use aope_core::mdp::{deterministic_policies, optimal_policy, pessimal_policy};
use aope_core::{Dataset, Policy, RewardNoise, Shape, Step, TabularMdp, Trajectory};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Row sums within this distance of 1 are accepted and renormalized.
pub const FILE_TOL: f64 = 1e-9;

/// Upper limit on the policies `all_deterministic` may expand to.
pub const DETERMINISTIC_LIMIT: usize = 1 << 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpFile {
    #[serde(rename = "S")]
    pub states: usize,
    #[serde(rename = "A")]
    pub actions: usize,
    #[serde(rename = "H")]
    pub horizon: usize,
    /// `P[h][s][a][s']` for `h < H - 1`.
    #[serde(rename = "P")]
    pub transitions: Vec<Vec<Vec<Vec<f64>>>>,
    /// `r[h][s][a]`.
    #[serde(rename = "r")]
    pub rewards: Vec<Vec<Vec<f64>>>,
    pub d1: Vec<f64>,
    #[serde(default)]
    pub reward_noise: RewardNoise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyFile {
    #[serde(rename = "S")]
    pub states: usize,
    #[serde(rename = "A")]
    pub actions: usize,
    #[serde(rename = "H")]
    pub horizon: usize,
    /// `pi[h][s][a]`.
    pub probs: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicySidecar {
    #[serde(rename = "S")]
    states: usize,
    #[serde(rename = "A")]
    actions: usize,
    #[serde(rename = "H")]
    horizon: usize,
    policies: Vec<Vec<Vec<Vec<f64>>>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrajectoryLine {
    i: usize,
    policy_id: usize,
    steps: Vec<(usize, usize, f64, Option<usize>)>,
}

fn nest3(flat: &[f64], a: usize, b: usize) -> Vec<Vec<Vec<f64>>> {
    flat.chunks(a * b).map(|m| m.chunks(b).map(<[f64]>::to_vec).collect()).collect()
}

fn flatten3(path: &Path, what: &str, x: &[Vec<Vec<f64>>], dims: [usize; 3]) -> Result<Vec<f64>> {
    let bad = || LabError::format(path, format!("{what} must have shape {dims:?}"));
    if x.len() != dims[0] {
        return Err(bad());
    }
    let mut out = Vec::with_capacity(dims.iter().product());
    for m in x {
        if m.len() != dims[1] {
            return Err(bad());
        }
        for row in m {
            if row.len() != dims[2] {
                return Err(bad());
            }
            out.extend_from_slice(row);
        }
    }
    Ok(out)
}

/// Rescales rows that are off by more than the core tolerance; rows already
/// within it are kept bit-for-bit.
fn renormalize(row: &mut [f64]) {
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > aope_core::mdp::PROB_TOL {
        row.iter_mut().for_each(|p| *p /= total);
    }
}

impl MdpFile {
    pub fn from_mdp(mdp: &TabularMdp) -> Self {
        let Shape { states, actions, horizon } = mdp.shape();
        let transitions =
            mdp.transitions().chunks(states * actions * states).map(|layer| nest3(layer, actions, states)).collect();
        MdpFile {
            states,
            actions,
            horizon,
            transitions,
            rewards: nest3(mdp.rewards(), states, actions),
            d1: mdp.initial().to_vec(),
            reward_noise: mdp.reward_noise(),
        }
    }

    /// Checks shapes, then validates at [`FILE_TOL`] and renormalizes.
    /// `path` only labels diagnostics.
    pub fn into_mdp(self, path: &Path) -> Result<TabularMdp> {
        let shape = Shape::new(self.states, self.actions, self.horizon).map_err(|e| LabError::format(path, e))?;
        if self.transitions.len() != self.horizon - 1 {
            return Err(LabError::format(path, format!("P must have H - 1 = {} layers", self.horizon - 1)));
        }
        let mut transitions = Vec::with_capacity(shape.transition_cells() * shape.states);
        for layer in &self.transitions {
            transitions.extend(flatten3(path, "P[h]", layer, [self.states, self.actions, self.states])?);
        }
        let rewards = flatten3(path, "r", &self.rewards, [self.horizon, self.states, self.actions])?;
        if self.d1.len() != self.states {
            return Err(LabError::format(path, format!("d1 must have {} entries", self.states)));
        }
        let mut d1 = self.d1;

        let loose = TabularMdp::from_parts(shape, transitions.clone(), rewards.clone(), d1.clone(), self.reward_noise)?;
        let violations: Vec<String> =
            loose.validate().into_iter().filter(|v| !within_file_tolerance(&loose, v)).map(|v| v.to_string()).collect();
        if !violations.is_empty() {
            return Err(LabError::Validation(format!("invalid MDP {}: {}", path.display(), violations.join("; "))));
        }
        transitions.chunks_mut(self.states).for_each(renormalize);
        renormalize(&mut d1);
        Ok(TabularMdp::new(shape, transitions, rewards, d1, self.reward_noise)?)
    }
}

fn within_file_tolerance(mdp: &TabularMdp, v: &aope_core::Violation) -> bool {
    use aope_core::Violation;
    match *v {
        Violation::TransitionSum { h, s, a, .. } => {
            let row = mdp.transition(h, s, a);
            row.iter().all(|&p| p >= 0.0) && (row.iter().sum::<f64>() - 1.0).abs() <= FILE_TOL
        }
        Violation::InitialSum { .. } => {
            let d1 = mdp.initial();
            d1.iter().all(|&p| p >= 0.0) && (d1.iter().sum::<f64>() - 1.0).abs() <= FILE_TOL
        }
        _ => false,
    }
}

impl PolicyFile {
    pub fn from_policy(pi: &Policy) -> Self {
        let Shape { states, actions, horizon } = pi.shape();
        PolicyFile { states, actions, horizon, probs: nest3(pi.probs(), states, actions) }
    }

    pub fn into_policy(self, path: &Path) -> Result<Policy> {
        let shape = Shape::new(self.states, self.actions, self.horizon).map_err(|e| LabError::format(path, e))?;
        let probs = flatten3(path, "probs", &self.probs, [self.horizon, self.states, self.actions])?;
        Ok(Policy::new(shape, probs)?)
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| LabError::io(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| LabError::format(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).map_err(|e| LabError::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| LabError::format(path, e))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| LabError::io(path, e))
}

pub fn read_mdp(path: &Path) -> Result<TabularMdp> {
    read_json::<MdpFile>(path)?.into_mdp(path)
}

pub fn write_mdp(path: &Path, mdp: &TabularMdp) -> Result<()> {
    write_json(path, &MdpFile::from_mdp(mdp))
}

pub fn read_policy(path: &Path) -> Result<Policy> {
    read_json::<PolicyFile>(path)?.into_policy(path)
}

pub fn write_policy(path: &Path, pi: &Policy) -> Result<()> {
    write_json(path, &PolicyFile::from_policy(pi))
}

/// A builtin name (`toy2x2`, `tree_F`) or a path to an MDP JSON file.
/// `rewards` picks `M1` or `M2` for the tree and must be absent otherwise.
pub fn resolve_mdp(source: &str, rewards: Option<&str>) -> Result<TabularMdp> {
    match (source, rewards) {
        ("toy2x2", None) => Ok(toy2x2()),
        ("tree_F", None | Some("M1")) => Ok(tree_mdp(TreeRewards::Zero)),
        ("tree_F", Some("M2")) => Ok(tree_mdp(TreeRewards::RightPaysAtLevelTwo)),
        ("tree_F", Some(other)) => Err(LabError::Config(format!("tree_F rewards must be M1 or M2, got {other:?}"))),
        (_, Some(_)) => Err(LabError::Config(format!("--rewards only applies to tree_F, not {source:?}"))),
        (path, None) => read_mdp(Path::new(path)),
    }
}

/// A named policy with the name it was requested under.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedPolicy {
    pub name: String,
    pub policy: Policy,
}

/// Resolves `optimal`, `anti_optimal`, `uniform`, `always_<a>` (`a` an index,
/// `L` or `R`), `all_deterministic`, or a policy JSON path.
pub fn resolve_policies(name: &str, mdp: &TabularMdp) -> Result<Vec<NamedPolicy>> {
    let shape = mdp.shape();
    let one = |policy: Policy| Ok(vec![NamedPolicy { name: name.to_string(), policy }]);
    match name {
        "optimal" => one(optimal_policy(mdp)),
        "anti_optimal" => one(pessimal_policy(mdp)),
        "uniform" => one(Policy::uniform(shape)),
        "all_deterministic" => {
            let all = deterministic_policies(shape, DETERMINISTIC_LIMIT)
                .map_err(|e| LabError::Config(format!("all_deterministic: {e}")))?;
            Ok(all
                .into_iter()
                .enumerate()
                .map(|(k, policy)| NamedPolicy { name: format!("det_{k}"), policy })
                .collect())
        }
        _ => {
            if let Some(a) = name.strip_prefix("always_") {
                let action = match a {
                    "L" => 0,
                    "R" => 1,
                    _ => a.parse().map_err(|_| LabError::Config(format!("unknown action in policy name {name:?}")))?,
                };
                return one(Policy::constant(shape, action).map_err(|e| LabError::Config(format!("{name}: {e}")))?);
            }
            let path = Path::new(name);
            if !path.exists() {
                return Err(LabError::Config(format!("unknown policy {name:?} (not a builtin name or a file)")));
            }
            let pi = read_policy(path)?;
            if pi.shape() != shape {
                return Err(LabError::Validation(format!("policy {name} does not match the MDP shape")));
            }
            one(pi)
        }
    }
}

pub fn resolve_policy(name: &str, mdp: &TabularMdp) -> Result<Policy> {
    let mut all = resolve_policies(name, mdp)?;
    if all.len() != 1 {
        return Err(LabError::Config(format!("{name:?} names {} policies, expected one", all.len())));
    }
    Ok(all.remove(0).policy)
}

/// `data.jsonl` -> `data.policies.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("policies.json")
}

/// Writes one JSON line per trajectory to `w`; returns the deduplicated
/// policy list that `policy_id` indexes.
pub fn write_trajectories<W: Write>(w: &mut W, data: &Dataset) -> std::io::Result<Vec<Policy>> {
    let mut unique: Vec<Policy> = Vec::new();
    for (i, (t, pi)) in data.trajectories().iter().zip(data.policy_seq()).enumerate() {
        let policy_id = match unique.iter().rposition(|p| p == pi) {
            Some(k) => k,
            None => {
                unique.push(pi.clone());
                unique.len() - 1
            }
        };
        let line = TrajectoryLine {
            i,
            policy_id,
            steps: t.steps.iter().map(|s| (s.state, s.action, s.reward, s.next_state)).collect(),
        };
        serde_json::to_writer(&mut *w, &line)?;
        w.write_all(b"\n")?;
    }
    Ok(unique)
}

/// The exact bytes [`write_dataset`] puts in the JSONL file.
pub fn dataset_bytes(data: &Dataset) -> Vec<u8> {
    let mut buf = Vec::new();
    write_trajectories(&mut buf, data).expect("writing to memory");
    buf
}

pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let file = File::create(path).map_err(|e| LabError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let unique = write_trajectories(&mut w, data).map_err(|e| LabError::io(path, e))?;
    w.flush().map_err(|e| LabError::io(path, e))?;
    let shape = data.shape();
    let sidecar = PolicySidecar {
        states: shape.states,
        actions: shape.actions,
        horizon: shape.horizon,
        policies: unique.iter().map(|p| nest3(p.probs(), shape.states, shape.actions)).collect(),
    };
    write_json(&sidecar_path(path), &sidecar)
}

/// Reads a dataset and its policy sidecar. Counts are recomputed and every
/// trajectory is checked against the sidecar's shape.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let side_path = sidecar_path(path);
    let sidecar: PolicySidecar = read_json(&side_path)?;
    let shape =
        Shape::new(sidecar.states, sidecar.actions, sidecar.horizon).map_err(|e| LabError::format(&side_path, e))?;
    let policies = sidecar
        .policies
        .into_iter()
        .map(|probs| {
            PolicyFile { states: shape.states, actions: shape.actions, horizon: shape.horizon, probs }
                .into_policy(&side_path)
        })
        .collect::<Result<Vec<_>>>()?;

    let file = File::open(path).map_err(|e| LabError::io(path, e))?;
    let mut data = Dataset::new(shape);
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| LabError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let at = |msg: String| LabError::format(path, format!("line {}: {msg}", lineno + 1));
        let parsed: TrajectoryLine = serde_json::from_str(&line).map_err(|e| at(e.to_string()))?;
        if parsed.i != data.len() {
            return Err(at(format!("trajectory index {} out of order", parsed.i)));
        }
        let policy = policies
            .get(parsed.policy_id)
            .ok_or_else(|| at(format!("policy_id {} not in sidecar", parsed.policy_id)))?;
        let steps = parsed
            .steps
            .into_iter()
            .map(|(state, action, reward, next_state)| Step { state, action, reward, next_state })
            .collect();
        data.push(Trajectory::new(steps), policy.clone()).map_err(|e| at(e.to_string()))?;
    }
    Ok(data)
}
