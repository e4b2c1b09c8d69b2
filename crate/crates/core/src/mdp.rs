//! Finite-horizon MDP primitives: shapes, kernels, policies, occupancy
//! measures, trajectory sampling and value recursions.
//!
//! Steps are 0-based in code: step `h` here is step `h + 1` in the usual
//! 1-based notation. The transition table has `H - 1` layers (step `h`
//! moves to step `h + 1`); the initial distribution is kept separately.

use ndarray::{s, Array1, Array2, Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nested;

/// Tolerance for probability rows built in memory.
pub const ROW_SUM_TOL: f64 = 1e-12;
/// Tolerance for probability rows read from files.
pub const LOAD_ROW_SUM_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MdpShape {
    pub states: usize,
    pub actions: usize,
    pub horizon: usize,
    /// The null action: zero reward and zero consumption everywhere.
    pub star_action: usize,
}

impl MdpShape {
    pub fn new(states: usize, actions: usize, horizon: usize, star_action: usize) -> Result<Self> {
        if states < 1 {
            return Err(Error::InvalidShape("need at least one state".into()));
        }
        if actions < 2 {
            return Err(Error::InvalidShape(
                "need the null action plus at least one real action".into(),
            ));
        }
        if horizon < 1 {
            return Err(Error::InvalidShape("horizon must be positive".into()));
        }
        if star_action >= actions {
            return Err(Error::InvalidShape(format!(
                "star action {star_action} out of range for {actions} actions"
            )));
        }
        Ok(Self { states, actions, horizon, star_action })
    }

    pub fn validate(&self) -> Result<()> {
        Self::new(self.states, self.actions, self.horizon, self.star_action).map(|_| ())
    }

    /// Dimensions of a `[h][s][a]` table.
    pub fn stage_dims(&self) -> (usize, usize, usize) {
        (self.horizon, self.states, self.actions)
    }

    /// Dimensions of the `[h][s][a][s']` transition table (`H - 1` layers).
    pub fn transition_dims(&self) -> (usize, usize, usize, usize) {
        (self.horizon - 1, self.states, self.actions, self.states)
    }

    pub fn zeros_stage(&self) -> Array3<f64> {
        Array3::zeros(self.stage_dims())
    }

    pub fn check_stage(&self, table: &Array3<f64>, what: &str) -> Result<()> {
        let (h, s, a) = self.stage_dims();
        if table.shape() != [h, s, a] {
            return Err(Error::ShapeMismatch(format!(
                "{what}: expected [{h}, {s}, {a}], got {:?}",
                table.shape()
            )));
        }
        Ok(())
    }
}

fn check_distribution(row: impl IntoIterator<Item = f64>, tol: f64, what: impl Fn() -> String) -> Result<()> {
    let mut sum = 0.0;
    for p in row {
        if !(0.0..=1.0).contains(&p) || p.is_nan() {
            return Err(Error::InvalidDistribution(format!("{}: entry {p} outside [0, 1]", what())));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > tol {
        return Err(Error::InvalidDistribution(format!("{}: row sums to {sum}", what())));
    }
    Ok(())
}

/// Per-step transition probabilities plus the initial state distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelFile", into = "KernelFile")]
pub struct TransitionKernel {
    shape: MdpShape,
    trans: Array4<f64>,
    init: Array1<f64>,
}

impl TransitionKernel {
    pub fn new(shape: MdpShape, trans: Array4<f64>, init: Array1<f64>) -> Result<Self> {
        Self::with_tolerance(shape, trans, init, ROW_SUM_TOL)
    }

    pub fn with_tolerance(
        shape: MdpShape,
        trans: Array4<f64>,
        init: Array1<f64>,
        tol: f64,
    ) -> Result<Self> {
        shape.validate()?;
        let (h, s, a, s2) = shape.transition_dims();
        if trans.shape() != [h, s, a, s2] {
            return Err(Error::ShapeMismatch(format!(
                "transition table: expected [{h}, {s}, {a}, {s2}], got {:?}",
                trans.shape()
            )));
        }
        if init.len() != shape.states {
            return Err(Error::ShapeMismatch(format!(
                "initial distribution: expected {} entries, got {}",
                shape.states,
                init.len()
            )));
        }
        check_distribution(init.iter().copied(), tol, || "initial distribution".into())?;
        for hh in 0..h {
            for ss in 0..s {
                for aa in 0..a {
                    check_distribution(trans.slice(s![hh, ss, aa, ..]).iter().copied(), tol, || {
                        format!("transition row (h={hh}, s={ss}, a={aa})")
                    })?;
                }
            }
        }
        Ok(Self { shape, trans, init })
    }

    pub fn shape(&self) -> MdpShape {
        self.shape
    }

    /// `trans[[h, s, a, s']]` for `h < H - 1`.
    pub fn trans(&self) -> &Array4<f64> {
        &self.trans
    }

    pub fn init(&self) -> &Array1<f64> {
        &self.init
    }

    pub fn prob(&self, h: usize, s: usize, a: usize, next: usize) -> f64 {
        self.trans[[h, s, a, next]]
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// On-disk instance layout:
/// `{"S":int,"A":int,"H":int,"star_action":int,"init":[...],"trans":[[[[...]]]]}`.
#[derive(Serialize, Deserialize)]
struct KernelFile {
    #[serde(rename = "S")]
    states: usize,
    #[serde(rename = "A")]
    actions: usize,
    #[serde(rename = "H")]
    horizon: usize,
    star_action: usize,
    init: Vec<f64>,
    trans: Vec<Vec<Vec<Vec<f64>>>>,
}

impl TryFrom<KernelFile> for TransitionKernel {
    type Error = Error;

    fn try_from(file: KernelFile) -> Result<Self> {
        let shape = MdpShape::new(file.states, file.actions, file.horizon, file.star_action)?;
        let (h, s, a, s2) = shape.transition_dims();
        let mut flat = Vec::with_capacity(h * s * a * s2);
        if file.trans.len() != h {
            return Err(Error::ShapeMismatch(format!(
                "trans has {} layers, expected H-1 = {h}",
                file.trans.len()
            )));
        }
        for layer in file.trans {
            if layer.len() != s || layer.iter().any(|r| r.len() != a || r.iter().any(|x| x.len() != s2)) {
                return Err(Error::ShapeMismatch("trans layer has wrong dimensions".into()));
            }
            flat.extend(layer.into_iter().flatten().flatten());
        }
        let trans = Array4::from_shape_vec((h, s, a, s2), flat)
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        TransitionKernel::with_tolerance(shape, trans, Array1::from(file.init), LOAD_ROW_SUM_TOL)
    }
}

impl From<TransitionKernel> for KernelFile {
    fn from(k: TransitionKernel) -> Self {
        let (h, s, a, _) = k.shape.transition_dims();
        let trans = (0..h)
            .map(|hh| {
                (0..s)
                    .map(|ss| (0..a).map(|aa| k.trans.slice(s![hh, ss, aa, ..]).to_vec()).collect())
                    .collect()
            })
            .collect();
        KernelFile {
            states: k.shape.states,
            actions: k.shape.actions,
            horizon: k.shape.horizon,
            star_action: k.shape.star_action,
            init: k.init.to_vec(),
            trans,
        }
    }
}

/// Stochastic non-stationary policy, `pi[[h, s, a]]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    #[serde(with = "nested::array3")]
    pi: Array3<f64>,
}

impl Policy {
    pub fn new(pi: Array3<f64>) -> Result<Self> {
        let (h, s, _) = pi.dim();
        for hh in 0..h {
            for ss in 0..s {
                check_distribution(pi.slice(s![hh, ss, ..]).iter().copied(), ROW_SUM_TOL, || {
                    format!("policy row (h={hh}, s={ss})")
                })?;
            }
        }
        Ok(Self { pi })
    }

    /// Always plays `action`.
    pub fn deterministic_constant(shape: MdpShape, action: usize) -> Self {
        let mut pi = shape.zeros_stage();
        pi.slice_mut(s![.., .., action]).fill(1.0);
        Self { pi }
    }

    /// Plays `choice[[h, s]]` deterministically.
    pub fn from_choices(shape: MdpShape, choice: &Array2<usize>) -> Self {
        let mut pi = shape.zeros_stage();
        for ((h, s), &a) in choice.indexed_iter() {
            pi[[h, s, a]] = 1.0;
        }
        Self { pi }
    }

    pub fn table(&self) -> &Array3<f64> {
        &self.pi
    }

    pub fn prob(&self, h: usize, s: usize, a: usize) -> f64 {
        self.pi[[h, s, a]]
    }

    fn check(&self, shape: MdpShape) -> Result<()> {
        shape.check_stage(&self.pi, "policy")
    }
}

/// State-action occupancy `q[[h, s, a]]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccupancyMeasure {
    #[serde(with = "nested::array3")]
    pub q: Array3<f64>,
}

/// Joint visit-and-transition occupancy `qbar[[h, s, a, s']]`. The last
/// layer's successor slot carries `q[[H-1, s, a]] * init[s']`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtendedOccupancy {
    pub qbar: Array4<f64>,
}

/// Reward `f` and consumption `g`, both `[h][s][a]` tables in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeFunctions {
    #[serde(rename = "f", with = "nested::array3")]
    pub reward: Array3<f64>,
    #[serde(rename = "g", with = "nested::array3")]
    pub consumption: Array3<f64>,
}

impl EpisodeFunctions {
    pub fn new(shape: MdpShape, reward: Array3<f64>, consumption: Array3<f64>) -> Result<Self> {
        let ep = Self { reward, consumption };
        ep.validate(shape)?;
        Ok(ep)
    }

    /// Checks ranges and that the null action is free.
    pub fn validate(&self, shape: MdpShape) -> Result<()> {
        shape.check_stage(&self.reward, "reward table")?;
        shape.check_stage(&self.consumption, "consumption table")?;
        for (&f, &g) in self.reward.iter().zip(self.consumption.iter()) {
            if !(0.0..=1.0).contains(&f) || !(0.0..=1.0).contains(&g) {
                return Err(Error::InvalidArgument(format!(
                    "reward/consumption entry ({f}, {g}) outside [0, 1]"
                )));
            }
        }
        for h in 0..shape.horizon {
            for s in 0..shape.states {
                let a = shape.star_action;
                if self.reward[[h, s, a]] != 0.0 || self.consumption[[h, s, a]] != 0.0 {
                    return Err(Error::NullActionNotFree { step: h, state: s });
                }
            }
        }
        Ok(())
    }

    /// `f - lambda * g`.
    pub fn penalized(&self, lambda: f64) -> Array3<f64> {
        &self.reward - &(lambda * &self.consumption)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub consumption: f64,
    /// Successor drawn after this step; `None` at the last step or when the
    /// episode halted before the transition was observed.
    pub next_state: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    /// Visit indicators `n[[h, s, a]]`.
    pub visits: Array3<u8>,
}

impl Trajectory {
    pub fn empty(shape: MdpShape) -> Self {
        Self { steps: Vec::new(), visits: Array3::zeros(shape.stage_dims()) }
    }

    pub fn push(&mut self, step: Step) {
        let h = self.steps.len();
        self.visits[[h, step.state, step.action]] = 1;
        self.steps.push(step);
    }

    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    pub fn total_consumption(&self) -> f64 {
        self.steps.iter().map(|s| s.consumption).sum()
    }
}

/// Draws an index from a probability row by inverse-CDF. Zero-probability
/// entries are never returned.
pub fn sample_index<R: Rng + ?Sized>(rng: &mut R, probs: impl IntoIterator<Item = f64>) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, p) in probs.into_iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

fn check_kernel_policy(kernel: &TransitionKernel, pi: &Policy) -> Result<MdpShape> {
    let shape = kernel.shape();
    pi.check(shape)?;
    Ok(shape)
}

/// Forward recursion for the extended occupancy of `pi` under `kernel`.
pub fn occupancy_from_policy(kernel: &TransitionKernel, pi: &Policy) -> Result<ExtendedOccupancy> {
    let shape = check_kernel_policy(kernel, pi)?;
    let (hn, sn, an) = shape.stage_dims();
    let mut qbar = Array4::zeros((hn, sn, an, sn));
    let mut marginal = kernel.init().clone();
    for h in 0..hn {
        let mut next = Array1::zeros(sn);
        for s in 0..sn {
            let mass = marginal[s];
            if mass == 0.0 {
                continue;
            }
            for a in 0..an {
                let sa = mass * pi.prob(h, s, a);
                if sa == 0.0 {
                    continue;
                }
                for s2 in 0..sn {
                    let p = if h + 1 < hn { kernel.prob(h, s, a, s2) } else { kernel.init()[s2] };
                    let v = sa * p;
                    qbar[[h, s, a, s2]] = v;
                    next[s2] += v;
                }
            }
        }
        marginal = next;
    }
    Ok(ExtendedOccupancy { qbar })
}

/// Sums out the successor index.
pub fn marginal(ext: &ExtendedOccupancy) -> OccupancyMeasure {
    OccupancyMeasure { q: ext.qbar.sum_axis(ndarray::Axis(3)) }
}

/// State-action occupancy `q(., ., h | start_state, start_step)` for steps
/// `h >= start_step`, obtained by restarting the forward recursion from a
/// point mass. Entries before `start_step` are zero.
pub fn conditional_occupancy(
    kernel: &TransitionKernel,
    pi: &Policy,
    start_state: usize,
    start_step: usize,
) -> Result<OccupancyMeasure> {
    let shape = check_kernel_policy(kernel, pi)?;
    let (hn, sn, an) = shape.stage_dims();
    if start_state >= sn || start_step >= hn {
        return Err(Error::InvalidArgument(format!(
            "conditioning point ({start_state}, {start_step}) out of range"
        )));
    }
    let mut q = Array3::zeros((hn, sn, an));
    let mut marginal = Array1::zeros(sn);
    marginal[start_state] = 1.0;
    for h in start_step..hn {
        let mut next = Array1::zeros(sn);
        for s in 0..sn {
            for a in 0..an {
                let sa = marginal[s] * pi.prob(h, s, a);
                q[[h, s, a]] = sa;
                if h + 1 < hn && sa != 0.0 {
                    for s2 in 0..sn {
                        next[s2] += sa * kernel.prob(h, s, a, s2);
                    }
                }
            }
        }
        marginal = next;
    }
    Ok(OccupancyMeasure { q })
}

/// Induced policy. Rows with zero visit mass play the null action.
pub fn policy_from_occupancy(q: &OccupancyMeasure, star_action: usize) -> Result<Policy> {
    let (hn, sn, an) = q.q.dim();
    if star_action >= an {
        return Err(Error::InvalidArgument(format!("star action {star_action} out of range")));
    }
    if let Some(v) = q.q.iter().find(|&&v| v < 0.0 || v.is_nan()) {
        return Err(Error::InvalidArgument(format!("negative occupancy entry {v}")));
    }
    let mut pi = Array3::zeros((hn, sn, an));
    for h in 0..hn {
        for s in 0..sn {
            let row = q.q.slice(s![h, s, ..]);
            let total: f64 = row.sum();
            if total > 0.0 {
                for a in 0..an {
                    pi[[h, s, a]] = row[a] / total;
                }
            } else {
                pi[[h, s, star_action]] = 1.0;
            }
        }
    }
    Ok(Policy { pi })
}

/// Induced transition kernel. Rows with zero mass become uniform; the
/// initial distribution is read off the last layer's successor slots.
pub fn kernel_from_extended(ext: &ExtendedOccupancy, star_action: usize) -> Result<TransitionKernel> {
    let (hn, sn, an, _) = ext.qbar.dim();
    let shape = MdpShape::new(sn, an, hn, star_action)?;
    let normalize = |row: ndarray::ArrayView1<f64>| -> Vec<f64> {
        let total: f64 = row.iter().map(|v| v.max(0.0)).sum();
        if total > 0.0 {
            row.iter().map(|v| v.max(0.0) / total).collect()
        } else {
            vec![1.0 / sn as f64; sn]
        }
    };
    let mut trans = Array4::zeros(shape.transition_dims());
    for h in 0..hn - 1 {
        for s in 0..sn {
            for a in 0..an {
                let row = normalize(ext.qbar.slice(s![h, s, a, ..]));
                trans.slice_mut(s![h, s, a, ..]).assign(&Array1::from(row));
            }
        }
    }
    let last = ext.qbar.slice(s![hn - 1, .., .., ..]).sum_axis(ndarray::Axis(0)).sum_axis(ndarray::Axis(0));
    let init = Array1::from(normalize(last.view()));
    TransitionKernel::with_tolerance(shape, trans, init, 1e-9)
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    Negative { step: usize, state: usize, action: usize, next: usize, value: f64 },
    /// Layer mass differs from one.
    LayerMass { step: usize, total: f64 },
    /// Outflow from `state` at `step` differs from inflow from `step - 1`.
    Flow { step: usize, state: usize, outflow: f64, inflow: f64 },
}

/// Reports every violation of the layer-mass and flow-conservation
/// conditions (and negativity) beyond `tol`.
pub fn validate_occupancy(ext: &ExtendedOccupancy, tol: f64) -> Vec<Violation> {
    let (hn, sn, an, _) = ext.qbar.dim();
    let mut out = Vec::new();
    for ((h, s, a, s2), &v) in ext.qbar.indexed_iter() {
        if v < -tol {
            out.push(Violation::Negative { step: h, state: s, action: a, next: s2, value: v });
        }
    }
    for h in 0..hn {
        let total = ext.qbar.slice(s![h, .., .., ..]).sum();
        if (total - 1.0).abs() > tol {
            out.push(Violation::LayerMass { step: h, total });
        }
    }
    for h in 1..hn {
        for s in 0..sn {
            let outflow = ext.qbar.slice(s![h, s, .., ..]).sum();
            let mut inflow = 0.0;
            for s0 in 0..sn {
                for a in 0..an {
                    inflow += ext.qbar[[h - 1, s0, a, s]];
                }
            }
            if (outflow - inflow).abs() > tol {
                out.push(Violation::Flow { step: h, state: s, outflow, inflow });
            }
        }
    }
    out
}

/// Samples one full episode with a seeded generator.
pub fn sample_episode(
    kernel: &TransitionKernel,
    pi: &Policy,
    fg: &EpisodeFunctions,
    seed: u64,
) -> Result<Trajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_episode_with(kernel, pi, fg, &mut rng)
}

pub fn sample_episode_with<R: Rng + ?Sized>(
    kernel: &TransitionKernel,
    pi: &Policy,
    fg: &EpisodeFunctions,
    rng: &mut R,
) -> Result<Trajectory> {
    let shape = check_kernel_policy(kernel, pi)?;
    shape.check_stage(&fg.reward, "reward table")?;
    shape.check_stage(&fg.consumption, "consumption table")?;
    let mut traj = Trajectory::empty(shape);
    let mut state = sample_index(rng, kernel.init().iter().copied());
    for h in 0..shape.horizon {
        let action = sample_index(rng, pi.table().slice(s![h, state, ..]).iter().copied());
        let next_state = (h + 1 < shape.horizon)
            .then(|| sample_index(rng, kernel.trans().slice(s![h, state, action, ..]).iter().copied()));
        traj.push(Step {
            state,
            action,
            reward: fg.reward[[h, state, action]],
            consumption: fg.consumption[[h, state, action]],
            next_state,
        });
        if let Some(n) = next_state {
            state = n;
        }
    }
    Ok(traj)
}

/// Reward-to-go `J[[h, s]]` for `h` in `0..=H`; the last row is zero.
pub fn reward_to_go(kernel: &TransitionKernel, pi: &Policy, reward: &Array3<f64>) -> Result<Array2<f64>> {
    let q = state_action_value(kernel, pi, reward)?;
    let shape = kernel.shape();
    let mut j = Array2::zeros((shape.horizon + 1, shape.states));
    for h in 0..shape.horizon {
        for s in 0..shape.states {
            j[[h, s]] = (0..shape.actions).map(|a| pi.prob(h, s, a) * q[[h, s, a]]).sum();
        }
    }
    Ok(j)
}

/// State-action value `Q[[h, s, a]]`.
pub fn state_action_value(kernel: &TransitionKernel, pi: &Policy, reward: &Array3<f64>) -> Result<Array3<f64>> {
    let shape = check_kernel_policy(kernel, pi)?;
    shape.check_stage(reward, "reward table")?;
    let (hn, sn, an) = shape.stage_dims();
    let mut q = Array3::zeros((hn, sn, an));
    let mut next_j = Array1::<f64>::zeros(sn);
    for h in (0..hn).rev() {
        for s in 0..sn {
            for a in 0..an {
                let future = if h + 1 < hn {
                    (0..sn).map(|s2| kernel.prob(h, s, a, s2) * next_j[s2]).sum()
                } else {
                    0.0
                };
                q[[h, s, a]] = reward[[h, s, a]] + future;
            }
        }
        next_j = Array1::from_iter((0..sn).map(|s| (0..an).map(|a| pi.prob(h, s, a) * q[[h, s, a]]).sum()));
    }
    Ok(q)
}

/// `sum_{h,s,a} q * table`.
pub fn inner(q: &OccupancyMeasure, table: &Array3<f64>) -> Result<f64> {
    if q.q.shape() != table.shape() {
        return Err(Error::ShapeMismatch(format!(
            "inner product of {:?} and {:?}",
            q.q.shape(),
            table.shape()
        )));
    }
    Ok(q.q.iter().zip(table.iter()).map(|(a, b)| a * b).sum())
}
