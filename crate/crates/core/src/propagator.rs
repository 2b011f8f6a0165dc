//! Adaptive Dormand-Prince 5(4) integration of the equations of motion with
//! an apoptosis check after every accepted step.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::apoptosis::{detect, detect_within, merge_tagged, ApoptosisPolicy};
use crate::c64;
use crate::ensemble::{EnsembleState, InitialCondition, MergeEvent, PairDistance};
use crate::error::{Error, Result};
use crate::linsys::{rhs as linear_rhs, DerivativeSet, LinearSettings, LinearSolution, Strategy};
use crate::models::Hamiltonian;
use crate::observables;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    #[serde(default = "d_rtol")]
    pub rtol: f64,
    #[serde(default = "d_atol")]
    pub atol: f64,
    #[serde(default = "d_initial_step")]
    pub initial_step: f64,
    #[serde(default = "d_max_step")]
    pub max_step: f64,
    #[serde(default = "d_min_step")]
    pub min_step: f64,
    pub t_final: f64,
    #[serde(default = "d_output_points")]
    pub output_points: usize,
    /// Upper bound on attempted steps.
    #[serde(default = "d_max_steps")]
    pub max_steps: usize,
}

fn d_rtol() -> f64 {
    1e-8
}
fn d_atol() -> f64 {
    1e-10
}
fn d_initial_step() -> f64 {
    1e-3
}
fn d_max_step() -> f64 {
    0.5
}
fn d_min_step() -> f64 {
    1e-7
}
fn d_output_points() -> usize {
    500
}
fn d_max_steps() -> usize {
    5_000_000
}

impl IntegratorConfig {
    pub fn new(t_final: f64, output_points: usize) -> Self {
        IntegratorConfig {
            rtol: d_rtol(),
            atol: d_atol(),
            initial_step: d_initial_step(),
            max_step: d_max_step(),
            min_step: d_min_step(),
            t_final,
            output_points,
            max_steps: d_max_steps(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.min_step > 0.0
            && self.min_step <= self.initial_step
            && self.initial_step <= self.max_step
            && self.rtol > 0.0
            && self.atol > 0.0
            && self.output_points >= 2
            && self.t_final.is_finite()
            && self.max_step.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Config(
                "integrator needs 0 < min_step <= initial_step <= max_step, positive tolerances and output_points >= 2".into(),
            ))
        }
    }

    /// Output grid `i T / (n - 1)`.
    pub fn output_times(&self) -> Vec<f64> {
        let n = self.output_points;
        (0..n).map(|i| self.t_final * i as f64 / (n - 1) as f64).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointPolicy {
    pub period: f64,
    pub path: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PropagationConfig {
    pub integrator: IntegratorConfig,
    pub apoptosis: ApoptosisPolicy,
    pub linear: LinearSettings,
    pub checkpoint: Option<CheckpointPolicy>,
    pub record_diagnostics: bool,
    /// Keep a mirror-symmetric start on the symmetric subspace (see
    /// [`MirrorSymmetry`]).
    pub symmetrize: bool,
}

impl PropagationConfig {
    pub fn new(integrator: IntegratorConfig) -> Self {
        PropagationConfig {
            integrator,
            apoptosis: ApoptosisPolicy::default(),
            linear: LinearSettings::default(),
            checkpoint: None,
            record_diagnostics: false,
            symmetrize: true,
        }
    }
}

/// Per accepted step solver record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostic {
    pub time: f64,
    pub step: f64,
    pub size: usize,
    pub reduced_size: usize,
    pub rcond: f64,
    /// Relative residual of the linear solve.
    pub residual: f64,
    pub min_distance: f64,
    pub strategy: Strategy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbortKind {
    StepUnderflow,
    Singular,
    StepBudget,
    Evaluation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Aborted { time: f64, kind: AbortKind, reason: String },
}

impl RunStatus {
    pub fn is_completed(&self) -> bool {
        matches!(self, RunStatus::Completed)
    }
}

/// Conserved quantities at one output time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub time: f64,
    pub norm_squared: f64,
    pub energy: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evaluations: usize,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub samples: Vec<Sample>,
    pub final_state: EnsembleState,
    pub diagnostics: Vec<StepDiagnostic>,
    pub status: RunStatus,
    pub stats: RunStats,
}

impl RunOutput {
    pub fn events(&self) -> &[MergeEvent] {
        self.final_state.partition.events()
    }
}

/// Reflection symmetry of a model carried by an ensemble state.
///
/// The equations of motion map a state that is invariant under the mirror
/// onto an invariant state, but the linear solves are ill conditioned in
/// directions belonging to nearly empty coherent states, and the parameter
/// flow amplifies round-off there. Projecting every derivative onto the
/// symmetric subspace keeps the trajectory on it.
#[derive(Clone, Debug, PartialEq)]
pub struct MirrorSymmetry {
    modes: Vec<usize>,
    system: Vec<usize>,
    /// Coherent state carried onto each coherent state.
    states: Vec<usize>,
}

impl MirrorSymmetry {
    /// Finds the coherent-state permutation under which `state` is invariant,
    /// if the model has a mirror and the state respects it.
    pub fn detect(state: &EnsembleState, initial: &InitialCondition) -> Option<MirrorSymmetry> {
        let modes = initial.mode_mirror.clone()?;
        let system = initial.system_mirror.clone()?;
        let (ns, m, n) = (state.system_dim(), state.multiplicity(), state.mode_count());
        if modes.len() != n || system.len() != ns {
            return None;
        }
        let f = &state.displacements;
        let a = &state.coefficients;
        let tol = 1e-12 * (1.0 + f.iter().chain(a.iter()).map(|z| z.norm()).fold(0.0, f64::max));
        let mut states = vec![usize::MAX; m];
        for k in 0..m {
            states[k] = (0..m).find(|&l| {
                (0..n).all(|j| (f[[l, j]] - f[[k, modes[j]]]).norm() <= tol)
                    && (0..ns).all(|i| (a[[system[i], l]] - a[[i, k]]).norm() <= tol)
            })?;
        }
        if (0..m).any(|k| states[states[k]] != k) {
            return None;
        }
        let sym = MirrorSymmetry { modes, system, states };
        sym.respects(state).then_some(sym)
    }

    /// True when mirror images of merged coherent states are merged too.
    pub fn respects(&self, state: &EnsembleState) -> bool {
        let labels = state.partition.labels();
        let m = labels.len();
        (0..m).all(|k| (0..m).all(|l| (labels[k] == labels[l]) == (labels[self.states[k]] == labels[self.states[l]])))
    }

    /// Adds the mirror image of every pair.
    pub fn close_pairs(&self, pairs: &mut Vec<PairDistance>) {
        let images: Vec<PairDistance> = pairs
            .iter()
            .map(|p| {
                let (a, b) = (self.states[p.pair.0], self.states[p.pair.1]);
                PairDistance {
                    pair: (a.min(b), a.max(b)),
                    distance: p.distance,
                }
            })
            .filter(|q| !pairs.iter().any(|p| p.pair == q.pair))
            .collect();
        pairs.extend(images);
    }

    /// Averages a packed derivative (`dA` row-major, then `dF`) with its
    /// mirror image.
    fn project(&self, d: &mut [c64]) {
        let (ns, m, n) = (self.system.len(), self.states.len(), self.modes.len());
        let (da, df) = d.split_at_mut(ns * m);
        let a0 = da.to_vec();
        for i in 0..ns {
            for k in 0..m {
                da[i * m + k] = 0.5 * (a0[i * m + k] + a0[self.system[i] * m + self.states[k]]);
            }
        }
        let f0 = df.to_vec();
        for k in 0..m {
            for j in 0..n {
                df[k * n + j] = 0.5 * (f0[k * n + j] + f0[self.states[k] * n + self.modes[j]]);
            }
        }
    }
}

/// Derivatives of a state, as from the equations of motion.
pub fn rhs<H: Hamiltonian + ?Sized>(state: &EnsembleState, model: &H, settings: &LinearSettings) -> Result<DerivativeSet> {
    linear_rhs(state, model, settings).map(|(d, _)| d)
}

fn pack(state: &EnsembleState) -> Vec<c64> {
    state.coefficients.iter().chain(state.displacements.iter()).copied().collect()
}

fn unpack_into(y: &[c64], state: &mut EnsembleState) {
    let na = state.coefficients.len();
    for (dst, src) in state.coefficients.iter_mut().zip(&y[..na]) {
        *dst = *src;
    }
    for (dst, src) in state.displacements.iter_mut().zip(&y[na..]) {
        *dst = *src;
    }
}

fn pack_derivative(d: &DerivativeSet) -> Vec<c64> {
    d.adot.iter().chain(d.fdot.iter()).copied().collect()
}

// Dormand-Prince 5(4) tableau.
const C2: f64 = 0.2;
const C3: f64 = 0.3;
const C4: f64 = 0.8;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 0.2;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

// Step-size control.
const BETA: f64 = 0.04;
const SAFE: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;

fn combine(y: &[c64], h: f64, terms: &[(f64, &[c64])]) -> Vec<c64> {
    let mut out = y.to_vec();
    for &(coef, k) in terms {
        if coef == 0.0 {
            continue;
        }
        let w = h * coef;
        for (o, v) in out.iter_mut().zip(k) {
            *o += w * v;
        }
    }
    out
}

/// Dense output of one accepted step.
struct Dense {
    t: f64,
    h: f64,
    c: [Vec<c64>; 5],
}

impl Dense {
    fn eval(&self, t: f64) -> Vec<c64> {
        let th = (t - self.t) / self.h;
        let th1 = 1.0 - th;
        let [c0, c1, c2, c3, c4] = &self.c;
        (0..c0.len())
            .map(|i| c0[i] + th * (c1[i] + th1 * (c2[i] + th * (c3[i] + th1 * c4[i]))))
            .collect()
    }
}

fn error_norm(err: &[c64], y: &[c64], y_new: &[c64], rtol: f64, atol: f64) -> f64 {
    let mut acc = 0.0;
    for i in 0..err.len() {
        let sr = atol + rtol * y[i].re.abs().max(y_new[i].re.abs());
        let si = atol + rtol * y[i].im.abs().max(y_new[i].im.abs());
        acc += (err[i].re / sr).powi(2) + (err[i].im / si).powi(2);
    }
    (acc / (2 * err.len()) as f64).sqrt()
}

enum Attempt {
    Done {
        y_new: Vec<c64>,
        k7: Vec<c64>,
        err: f64,
        dense: Dense,
        report: LinearSolution,
    },
    Failed(Error),
}

struct Evaluator<'a, H: Hamiltonian + ?Sized> {
    model: &'a H,
    settings: LinearSettings,
    mirror: Option<MirrorSymmetry>,
    scratch: EnsembleState,
    evaluations: usize,
}

impl<H: Hamiltonian + ?Sized> Evaluator<'_, H> {
    fn eval(&mut self, t: f64, y: &[c64]) -> Result<(Vec<c64>, LinearSolution)> {
        self.evaluations += 1;
        unpack_into(y, &mut self.scratch);
        self.scratch.time = t;
        let (d, sol) = linear_rhs(&self.scratch, self.model, &self.settings)?;
        let mut k = pack_derivative(&d);
        if let Some(mirror) = &self.mirror {
            mirror.project(&mut k);
        }
        Ok((k, sol))
    }

    fn attempt(&mut self, t: f64, y: &[c64], k1: &[c64], h: f64, rtol: f64, atol: f64) -> Attempt {
        macro_rules! stage {
            ($t:expr, $y:expr) => {
                match self.eval($t, &$y) {
                    Ok(v) => v,
                    Err(e) => return Attempt::Failed(e),
                }
            };
        }
        let (k2, _) = stage!(t + C2 * h, combine(y, h, &[(A21, k1)]));
        let (k3, _) = stage!(t + C3 * h, combine(y, h, &[(A31, k1), (A32, &k2)]));
        let (k4, _) = stage!(t + C4 * h, combine(y, h, &[(A41, k1), (A42, &k2), (A43, &k3)]));
        let (k5, _) = stage!(
            t + C5 * h,
            combine(y, h, &[(A51, k1), (A52, &k2), (A53, &k3), (A54, &k4)])
        );
        let (k6, _) = stage!(
            t + h,
            combine(y, h, &[(A61, k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)])
        );
        let y_new = combine(y, h, &[(A71, k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)]);
        let (k7, report) = stage!(t + h, y_new);
        let zero = vec![c64::new(0.0, 0.0); y.len()];
        let err_vec = combine(
            &zero,
            h,
            &[(E1, k1), (E3, &k3), (E4, &k4), (E5, &k5), (E6, &k6), (E7, &k7)],
        );
        let err = error_norm(&err_vec, y, &y_new, rtol, atol);

        let ydiff: Vec<c64> = y_new.iter().zip(y).map(|(a, b)| a - b).collect();
        let bspl: Vec<c64> = k1.iter().zip(&ydiff).map(|(k, d)| h * k - d).collect();
        let c3: Vec<c64> = ydiff
            .iter()
            .zip(&k7)
            .zip(&bspl)
            .map(|((d, k), b)| d - h * k - b)
            .collect();
        let c4 = combine(
            &zero,
            h,
            &[(D1, k1), (D3, &k3), (D4, &k4), (D5, &k5), (D6, &k6), (D7, &k7)],
        );
        let dense = Dense {
            t,
            h,
            c: [y.to_vec(), ydiff, bspl, c3, c4],
        };
        Attempt::Done {
            y_new,
            k7,
            err,
            dense,
            report,
        }
    }
}

fn abort_kind(e: &Error) -> AbortKind {
    match e {
        Error::StepUnderflow { .. } => AbortKind::StepUnderflow,
        Error::Singular { .. } => AbortKind::Singular,
        Error::StepBudget(_) => AbortKind::StepBudget,
        _ => AbortKind::Evaluation,
    }
}

/// Integrates from `initial.time` to `t_final`, calling `observe` at every
/// output time that is not earlier than the start.
pub fn run<H: Hamiltonian + ?Sized>(
    initial: EnsembleState,
    model: &H,
    config: &PropagationConfig,
    observe: &mut dyn FnMut(&EnsembleState),
) -> Result<RunOutput> {
    let ic = &config.integrator;
    ic.validate()?;
    config.apoptosis.validate()?;
    initial.validate()?;
    if model.system_dim() != initial.system_dim() || model.mode_count() != initial.mode_count() {
        return Err(Error::Config("model and state dimensions disagree".into()));
    }
    let t_final = ic.t_final;
    let t_start = initial.time;
    if t_final < t_start {
        return Err(Error::Config(format!("t_final {t_final} lies before the start time {t_start}")));
    }
    let span = t_final.abs().max(1.0);
    let mut outputs = ic
        .output_times()
        .into_iter()
        .filter(|&to| to >= t_start - 1e-12 * span)
        .peekable();

    let mut state = initial;
    let mirror = if config.symmetrize {
        MirrorSymmetry::detect(&state, &model.initial_condition())
    } else {
        None
    };
    let close = |pairs: &mut Vec<PairDistance>| {
        if let Some(mirror) = &mirror {
            mirror.close_pairs(pairs);
        }
    };
    if config.apoptosis.enabled {
        let mut pairs = detect(&state, &config.apoptosis);
        close(&mut pairs);
        if !pairs.is_empty() {
            state = merge_tagged(&state, &pairs, &config.apoptosis, false)?;
        }
    }
    state.sync_members();

    let mut samples = Vec::new();
    let mut diagnostics = Vec::new();
    let mut stats = RunStats::default();
    let emit = |s: &EnsembleState, samples: &mut Vec<Sample>, observe: &mut dyn FnMut(&EnsembleState)| {
        samples.push(Sample {
            time: s.time,
            norm_squared: s.norm_squared(),
            energy: observables::energy(s, model).unwrap_or(f64::NAN),
        });
        observe(s);
    };
    while let Some(&to) = outputs.peek() {
        if (to - state.time).abs() <= 1e-12 * span {
            let mut s = state.clone();
            s.time = to;
            emit(&s, &mut samples, observe);
            outputs.next();
        } else {
            break;
        }
    }

    let mut ev = Evaluator {
        model,
        settings: config.linear,
        mirror: mirror.clone(),
        scratch: state.clone(),
        evaluations: 0,
    };
    let mut t = state.time;
    let mut y = pack(&state);
    let mut h = ic.initial_step.min(ic.max_step);
    let mut k1: Option<Vec<c64>> = None;
    let mut facold: f64 = 1e-4;
    let mut last_rejected = false;
    let mut forced_this_step = false;
    let mut last_rcond = f64::NAN;
    let mut next_checkpoint = config.checkpoint.as_ref().map(|c| t + c.period);
    let expo1 = 0.2 - BETA * 0.75;

    let abort = |e: Error, t: f64, state: EnsembleState, samples, diagnostics, stats| RunOutput {
        samples,
        final_state: state,
        diagnostics,
        status: RunStatus::Aborted {
            time: t,
            kind: abort_kind(&e),
            reason: e.to_string(),
        },
        stats,
    };

    while t < t_final {
        if stats.accepted + stats.rejected >= ic.max_steps {
            stats.rhs_evaluations = ev.evaluations;
            return Ok(abort(Error::StepBudget(ic.max_steps), t, state, samples, diagnostics, stats));
        }
        let last = t + h >= t_final - 1e-14 * span;
        let h_try = if last { t_final - t } else { h };
        ev.scratch = state.clone();

        let result = match &k1 {
            Some(k) => ev.attempt(t, &y, k, h_try, ic.rtol, ic.atol),
            None => match ev.eval(t, &y) {
                Ok((k, sol)) => {
                    last_rcond = sol.rcond;
                    let r = ev.attempt(t, &y, &k, h_try, ic.rtol, ic.atol);
                    k1 = Some(k);
                    r
                }
                Err(e) => Attempt::Failed(e),
            },
        };

        match result {
            Attempt::Failed(e) => {
                let singular_pair = match &e {
                    Error::Singular { pair, distance, .. } => Some((*pair, *distance)),
                    _ => None,
                };
                let recoverable = singular_pair.is_some() && config.apoptosis.enabled && !forced_this_step;
                if recoverable {
                    let eps = config.apoptosis.epsilon;
                    let mut pairs = detect_within(&state, eps);
                    if let Some((pair, distance)) = singular_pair {
                        if distance < 2.0 * eps && pair.0 != pair.1 && !pairs.iter().any(|p| p.pair == pair) {
                            pairs.push(PairDistance { pair, distance });
                        }
                    }
                    close(&mut pairs);
                    if !pairs.is_empty() {
                        stats.rejected += 1;
                        forced_this_step = true;
                        state = merge_tagged(&state, &pairs, &config.apoptosis, true)?;
                        y = pack(&state);
                        k1 = None;
                        continue;
                    }
                }
                stats.rhs_evaluations = ev.evaluations;
                return Ok(abort(e, t, state, samples, diagnostics, stats));
            }
            Attempt::Done {
                y_new,
                k7,
                err,
                dense,
                report,
            } => {
                let err = if err.is_finite() { err } else { f64::INFINITY };
                let fac11 = err.powf(expo1);
                if err <= 1.0 {
                    let mut fac = fac11 / facold.powf(BETA);
                    fac = (fac / SAFE).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
                    let mut h_new = h_try / fac;
                    facold = err.max(1e-4);
                    if last_rejected {
                        h_new = h_new.min(h_try);
                    }
                    h_new = h_new.min(ic.max_step);
                    stats.accepted += 1;
                    last_rejected = false;
                    forced_this_step = false;
                    let t_new = if last { t_final } else { t + h_try };

                    while let Some(&to) = outputs.peek() {
                        if to <= t_new + 1e-12 * span {
                            let mut s = state.clone();
                            let yi = if (to - t_new).abs() <= 1e-12 * span { y_new.clone() } else { dense.eval(to) };
                            unpack_into(&yi, &mut s);
                            s.time = to;
                            emit(&s, &mut samples, observe);
                            outputs.next();
                        } else {
                            break;
                        }
                    }

                    t = t_new;
                    y = y_new;
                    unpack_into(&y, &mut state);
                    state.time = t;
                    k1 = Some(k7);
                    last_rcond = report.rcond;
                    if !state.partition.is_trivial() {
                        state.sync_members();
                        y = pack(&state);
                    }
                    if config.record_diagnostics {
                        diagnostics.push(StepDiagnostic {
                            time: t,
                            step: h_try,
                            size: report.size,
                            reduced_size: report.reduced_size,
                            rcond: report.rcond,
                            residual: report.residual,
                            min_distance: state.closest_free_pair().map_or(f64::INFINITY, |p| p.2),
                            strategy: report.strategy,
                        });
                    }
                    if config.apoptosis.enabled {
                        let mut pairs = detect(&state, &config.apoptosis);
                        close(&mut pairs);
                        if !pairs.is_empty() {
                            state = merge_tagged(&state, &pairs, &config.apoptosis, false)?;
                            y = pack(&state);
                            k1 = None;
                        }
                    }
                    if let (Some(cp), Some(due)) = (&config.checkpoint, next_checkpoint) {
                        if t >= due {
                            state.to_checkpoint().write(&cp.path)?;
                            next_checkpoint = Some(t + cp.period);
                        }
                    }
                    if t < t_final && h_new < ic.min_step {
                        stats.rhs_evaluations = ev.evaluations;
                        let e = underflow(&state, t, h_new, last_rcond);
                        return Ok(abort(e, t, state, samples, diagnostics, stats));
                    }
                    h = h_new;
                } else {
                    let h_new = h_try / (1.0 / FAC_MIN).min(fac11 / SAFE);
                    stats.rejected += 1;
                    last_rejected = true;
                    if h_new < ic.min_step {
                        stats.rhs_evaluations = ev.evaluations;
                        let e = underflow(&state, t, h_new, last_rcond);
                        return Ok(abort(e, t, state, samples, diagnostics, stats));
                    }
                    h = h_new;
                }
            }
        }
    }
    stats.rhs_evaluations = ev.evaluations;
    Ok(RunOutput {
        samples,
        final_state: state,
        diagnostics,
        status: RunStatus::Completed,
        stats,
    })
}

fn underflow(state: &EnsembleState, t: f64, h: f64, rcond: f64) -> Error {
    Error::StepUnderflow {
        time: t,
        step: h,
        min_distance: state.closest_free_pair().map_or(f64::INFINITY, |p| p.2),
        rcond,
    }
}

/// Convenience wrapper collecting the state at every output time.
pub fn run_collect<H: Hamiltonian + ?Sized>(
    initial: EnsembleState,
    model: &H,
    config: &PropagationConfig,
) -> Result<(RunOutput, Vec<EnsembleState>)> {
    let mut states = Vec::new();
    let out = run(initial, model, config, &mut |s| states.push(s.clone()))?;
    Ok((out, states))
}
