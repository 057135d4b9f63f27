//! Shuffled linear regression: recover `W` from `X` and an unordered copy of
//! `X W* + E` by minimising `L(W) = OT_ε(XW, Ỹ)`, switching between full-batch
//! Adam and damped Newton on the sign of the smallest Hessian eigenvalue.

use std::io::Write;

use crate::autodiff::grad_source;
use crate::config::{SinkhornConfig, TileConfig};
use crate::error::{Error, Result};
use crate::hvp::{
    cg_solve, hvp_apply, hvp_apply_many, lanczos_min_eig, parameter_hessian, parameter_hvp,
    HvpConfig, HvpWorkspace, LanczosConfig,
};
use crate::linalg::{dot, norm2, Matrix};
use crate::measure::{CostSpec, DiscreteMeasure};
use crate::potentials::{shift_potentials, shifts, unshift_potentials, ShiftedPotentials};
use crate::rng::Rng;
use crate::stream::IoLedger;

/// How curvature is obtained for the eigenvalue check and the Newton system.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HessianMode {
    /// Assemble the `d² × d²` parameter Hessian from one batched HVP call.
    Assembled,
    /// Every matvec is a fresh streamed parameter HVP.
    MatrixFree,
}

/// Data generation and optimiser settings.
#[derive(Clone, Debug)]
pub struct DemoConfig {
    pub n: usize,
    pub d: usize,
    pub eps: f64,
    pub seed: u64,
    /// Noise std as a fraction of `std(X W*)`.
    pub noise: f64,
    pub permute: bool,
    /// Use `W* = I` instead of a Gaussian draw.
    pub identity_target: bool,
    /// Multiplier on the standardised features.
    pub x_scale: f64,
    /// Std of the initial `W` entries; with `identity_target` the start is `I` plus this noise.
    pub init_scale: f64,
    pub max_steps: usize,
    pub lr: f64,
    pub betas: (f64, f64),
    pub adam_eps: f64,
    pub check_every: usize,
    pub switch_threshold: f64,
    pub newton_step: f64,
    pub armijo_beta: f64,
    pub armijo_c: f64,
    pub max_backtracks: usize,
    pub newton_cg_iters: usize,
    pub newton_cg_tol: f64,
    /// Absolute ridge added to the parameter Hessian in the Newton system.
    pub ridge: f64,
    pub grad_tol: f64,
    pub patience: usize,
    pub hvp: HvpConfig,
    pub lanczos: LanczosConfig,
    pub hessian: HessianMode,
    /// Early-exit marginal tolerance of every inner solve.
    pub solve_tol: f64,
    /// Annealing factor of the first (cold) solve, which starts at the cost diameter.
    pub anneal_factor: f64,
    /// Iterations at the target `ε` after annealing in the cold solve.
    pub cold_extra_iters: usize,
    /// Iteration cap of solves warm-started from the previous iterate.
    pub warm_iters: usize,
    pub tiles: TileConfig,
}

impl Default for DemoConfig {
    fn default() -> Self {
        DemoConfig {
            n: 2000,
            d: 5,
            eps: 0.25,
            seed: 0,
            noise: 0.05,
            permute: true,
            identity_target: false,
            x_scale: 1.0,
            init_scale: (0.2f64).sqrt(),
            max_steps: 200,
            lr: 0.03,
            betas: (0.9, 0.999),
            adam_eps: 1e-8,
            check_every: 5,
            switch_threshold: 1e-3,
            newton_step: 10.0,
            armijo_beta: 0.5,
            armijo_c: 0.1,
            max_backtracks: 12,
            newton_cg_iters: 100,
            newton_cg_tol: 1e-6,
            ridge: 1e-8,
            grad_tol: 5e-3,
            patience: 3,
            hvp: HvpConfig::default(),
            lanczos: LanczosConfig::default(),
            hessian: HessianMode::Assembled,
            solve_tol: 1e-9,
            anneal_factor: 0.9,
            cold_extra_iters: 60,
            warm_iters: 20,
            tiles: TileConfig::default(),
        }
    }
}

impl DemoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 {
            return Err(Error::invalid("n and d must be positive"));
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(Error::invalid("eps must be positive"));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::invalid("noise must be non-negative"));
        }
        if !(self.x_scale.is_finite() && self.x_scale > 0.0) {
            return Err(Error::invalid("x_scale must be positive"));
        }
        if !(self.anneal_factor > 0.0 && self.anneal_factor < 1.0) {
            return Err(Error::invalid("anneal_factor must lie in (0, 1)"));
        }
        if self.warm_iters == 0 {
            return Err(Error::invalid("warm_iters must be positive"));
        }
        if self.check_every == 0 {
            return Err(Error::invalid("check_every must be positive"));
        }
        if !(self.armijo_beta > 0.0 && self.armijo_beta < 1.0) {
            return Err(Error::invalid("armijo_beta must lie in (0, 1)"));
        }
        self.hvp.validate()?;
        self.tiles.validate()
    }
}

/// Generated regression instance.
#[derive(Clone, Debug)]
pub struct DemoProblem {
    /// Design matrix `X`, `n × d`.
    pub design: Matrix,
    pub w_star: Matrix,
    /// Observed targets `Ỹ`, uniform weights.
    pub targets: DiscreteMeasure,
    pub w_init: Matrix,
}

/// Standardised features drawn from a seeded Gaussian mixture with four
/// anisotropic components.
pub fn synthetic_features(rng: &mut Rng, n: usize, d: usize) -> Matrix {
    const COMPONENTS: usize = 4;
    let means = rng.normal_matrix(COMPONENTS, d, 1.5);
    let spreads: Vec<Vec<f64>> = (0..COMPONENTS)
        .map(|_| (0..d).map(|_| 0.3 + 0.7 * rng.uniform()).collect())
        .collect();
    let mix = rng.simplex(COMPONENTS);
    let mut x = Matrix::zeros(n, d);
    for i in 0..n {
        let u = rng.uniform();
        let mut k = 0;
        let mut acc = mix[0];
        while u > acc && k + 1 < COMPONENTS {
            k += 1;
            acc += mix[k];
        }
        for t in 0..d {
            x.set(i, t, means.get(k, t) + spreads[k][t] * rng.normal());
        }
    }
    standardize(&mut x);
    x
}

fn standardize(x: &mut Matrix) {
    let (n, d) = (x.rows(), x.cols());
    for t in 0..d {
        let col = x.column(t);
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
        for i in 0..n {
            x.set(i, t, (x.get(i, t) - mean) / sd);
        }
    }
}

fn matrix_std(m: &Matrix) -> f64 {
    let v = m.as_slice();
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / v.len() as f64).sqrt()
}

/// Draws `X`, `W*`, the noisy shuffled targets and the starting point.
pub fn generate_problem(cfg: &DemoConfig) -> Result<DemoProblem> {
    cfg.validate()?;
    let (n, d) = (cfg.n, cfg.d);
    let mut rng = Rng::new(cfg.seed);
    let design = synthetic_features(&mut rng, n, d).scale(cfg.x_scale);
    let w_star = if cfg.identity_target {
        Matrix::identity(d)
    } else {
        rng.normal_matrix(d, d, (1.0 / d as f64).sqrt())
    };
    let clean = design.matmul(&w_star)?;
    let sigma = cfg.noise * matrix_std(&clean);
    let noisy = if sigma > 0.0 {
        clean.add_scaled(1.0, &rng.normal_matrix(n, d, sigma))?
    } else {
        clean
    };
    let observed = if cfg.permute {
        let perm = rng.permutation(n);
        let mut out = Matrix::zeros(n, d);
        for (i, &p) in perm.iter().enumerate() {
            out.row_mut(i).copy_from_slice(noisy.row(p));
        }
        out
    } else {
        noisy
    };
    let noise0 = rng.normal_matrix(d, d, cfg.init_scale);
    let w_init = if cfg.identity_target {
        Matrix::identity(d).add_scaled(1.0, &noise0)?
    } else {
        noise0
    };
    Ok(DemoProblem {
        design,
        w_star,
        targets: DiscreteMeasure::uniform(observed)?,
        w_init,
    })
}

/// Optimiser used for the step leaving an iterate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Adam,
    Newton,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Adam => "adam",
            Phase::Newton => "newton",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(Phase::Adam),
            "newton" => Ok(Phase::Newton),
            other => Err(Error::Format(format!("unknown phase {other:?}"))),
        }
    }
}

/// One trajectory row: the state at `step` and the phase used to leave it.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRow {
    pub step: usize,
    pub phase: Phase,
    pub loss: f64,
    pub grad_norm: f64,
    /// Present on eigenvalue-check steps only.
    pub lambda_min: Option<f64>,
}

/// Why the optimiser stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    GradientTolerance,
    Patience,
    LineSearchFailed,
    MaxSteps,
}

impl StopReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            StopReason::GradientTolerance => "gradient tolerance",
            StopReason::Patience => "no improvement",
            StopReason::LineSearchFailed => "line search failed",
            StopReason::MaxSteps => "step limit",
        }
    }
}

#[derive(Clone, Debug)]
pub struct DemoOutcome {
    pub w_hat: Matrix,
    pub w_star: Matrix,
    pub trajectory: Vec<TrajectoryRow>,
    pub stop: StopReason,
}

/// Failure inside the optimisation loop, with the trajectory recorded so far.
#[derive(Debug)]
pub struct DemoFailure {
    pub error: Error,
    pub trajectory: Vec<TrajectoryRow>,
}

/// Objective evaluations with warm-started solves.
struct Objective<'a> {
    design: &'a Matrix,
    targets: &'a DiscreteMeasure,
    cfg: &'a DemoConfig,
    cost: CostSpec,
    ledger: IoLedger,
}

/// A solved iterate.
struct State {
    w: Matrix,
    src: DiscreteMeasure,
    potentials: ShiftedPotentials,
    loss: f64,
}

impl Objective<'_> {
    fn solve(&self, w: &Matrix, warm: Option<&State>) -> Result<State> {
        let src = DiscreteMeasure::uniform(self.design.matmul(w)?)?;
        let base = SinkhornConfig {
            eps: self.cfg.eps,
            marginal_tol: self.cfg.solve_tol,
            max_iters: self.cfg.warm_iters,
            ..Default::default()
        };
        let report = match warm {
            Some(prev) => {
                let (a_old, b) = shifts(&prev.src, self.targets, &self.cost)?;
                let (f, g) = unshift_potentials(&prev.potentials, &a_old, &b)?;
                let (a_new, _) = shifts(&src, self.targets, &self.cost)?;
                let init = shift_potentials(&f, &g, &a_new, &b, self.cfg.eps)?;
                crate::solver::sinkhorn_solve_warm(
                    &src,
                    self.targets,
                    &self.cost,
                    &base,
                    &self.cfg.tiles,
                    &self.ledger,
                    &init,
                )?
            }
            None => {
                let annealed = SinkhornConfig {
                    eps_scaling: self.cfg.anneal_factor,
                    extra_iters: self.cfg.cold_extra_iters,
                    max_iters: usize::MAX,
                    ..base
                };
                crate::solver::sinkhorn_solve(
                    &src,
                    self.targets,
                    &self.cost,
                    &annealed,
                    &self.cfg.tiles,
                    &self.ledger,
                )?
            }
        };
        Ok(State {
            w: w.clone(),
            src,
            potentials: report.potentials,
            loss: report.dual_cost,
        })
    }

    fn gradient(&self, s: &State) -> Result<Vec<f64>> {
        let gy = grad_source(&s.src, self.targets, &s.potentials, &self.cost, &self.cfg.tiles, &self.ledger)?;
        Ok(self.design.t_matmul(&gy)?.into_vec())
    }

    fn workspace(&self, s: &State) -> Result<HvpWorkspace> {
        HvpWorkspace::build(&s.src, self.targets, &s.potentials, &self.cfg.tiles, &self.ledger)
    }

    fn hessian(&self, s: &State, ws: &HvpWorkspace) -> Result<Matrix> {
        parameter_hessian(self.design, self.cfg.d, |dirs| {
            let outs = hvp_apply_many(&s.src, self.targets, ws, dirs, &self.cfg.hvp, &self.cfg.tiles, &self.ledger)?;
            Ok(outs.into_iter().map(|r| r.value).collect())
        })
    }

    fn hvp(&self, s: &State, ws: &HvpWorkspace, v: &[f64]) -> Result<Vec<f64>> {
        parameter_hvp(self.design, self.cfg.d, v, |a| {
            Ok(hvp_apply(&s.src, self.targets, ws, a, &self.cfg.hvp, &self.cfg.tiles, &self.ledger)?.value)
        })
    }
}

/// Curvature at one iterate, built lazily.
struct Curvature<'o, 'a> {
    obj: &'o Objective<'a>,
    ws: HvpWorkspace,
    assembled: Option<Matrix>,
}

impl<'o, 'a> Curvature<'o, 'a> {
    fn new(obj: &'o Objective<'a>, s: &State) -> Result<Self> {
        let ws = obj.workspace(s)?;
        let assembled = match obj.cfg.hessian {
            HessianMode::Assembled => Some(obj.hessian(s, &ws)?),
            HessianMode::MatrixFree => None,
        };
        Ok(Curvature { obj, ws, assembled })
    }

    fn apply(&self, s: &State, v: &[f64]) -> Result<Vec<f64>> {
        match &self.assembled {
            Some(h) => Ok((0..h.rows()).map(|i| dot(h.row(i), v)).collect()),
            None => self.obj.hvp(s, &self.ws, v),
        }
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn direction(&mut self, g: &[f64], cfg: &DemoConfig) -> Vec<f64> {
        let (b1, b2) = cfg.betas;
        self.t += 1;
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        (0..g.len())
            .map(|i| {
                self.m[i] = b1 * self.m[i] + (1.0 - b1) * g[i];
                self.v[i] = b2 * self.v[i] + (1.0 - b2) * g[i] * g[i];
                -cfg.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + cfg.adam_eps)
            })
            .collect()
    }
}

fn step_by(w: &Matrix, dir: &[f64], t: f64) -> Matrix {
    let mut out = w.clone();
    out.as_mut_slice().iter_mut().zip(dir).for_each(|(a, b)| *a += t * b);
    out
}

/// Runs the optimiser on a generated problem.
pub fn run_shuffled_demo(cfg: &DemoConfig) -> std::result::Result<DemoOutcome, DemoFailure> {
    let problem = generate_problem(cfg).map_err(|error| DemoFailure {
        error,
        trajectory: Vec::new(),
    })?;
    optimize(&problem, cfg)
}

/// Runs the optimiser from `problem.w_init`.
pub fn optimize(problem: &DemoProblem, cfg: &DemoConfig) -> std::result::Result<DemoOutcome, DemoFailure> {
    optimize_with(problem, cfg, |_| {})
}

/// As [`optimize`], calling `on_row` as each trajectory row is produced.
pub fn optimize_with(
    problem: &DemoProblem,
    cfg: &DemoConfig,
    mut on_row: impl FnMut(&TrajectoryRow),
) -> std::result::Result<DemoOutcome, DemoFailure> {
    let mut trajectory = Vec::new();
    match optimize_into(problem, cfg, &mut trajectory, &mut on_row) {
        Ok((w_hat, stop)) => Ok(DemoOutcome {
            w_hat,
            w_star: problem.w_star.clone(),
            trajectory,
            stop,
        }),
        Err(error) => Err(DemoFailure { error, trajectory }),
    }
}

fn optimize_into(
    problem: &DemoProblem,
    cfg: &DemoConfig,
    trajectory: &mut Vec<TrajectoryRow>,
    on_row: &mut dyn FnMut(&TrajectoryRow),
) -> Result<(Matrix, StopReason)> {
    cfg.validate()?;
    let obj = Objective {
        design: &problem.design,
        targets: &problem.targets,
        cfg,
        cost: CostSpec::SquaredEuclidean,
        ledger: IoLedger::new(),
    };
    let q = cfg.d * cfg.d;
    let mut adam = Adam {
        m: vec![0.0; q],
        v: vec![0.0; q],
        t: 0,
    };
    let mut state = obj.solve(&problem.w_init, None)?;
    let mut phase = Phase::Adam;
    let mut best = f64::INFINITY;
    let mut stale = 0usize;

    for step in 0..=cfg.max_steps {
        if !state.loss.is_finite() {
            return Err(Error::NonFinite(format!("loss at step {step}")));
        }
        let grad = obj.gradient(&state)?;
        let grad_norm = norm2(&grad);

        let check = step % cfg.check_every == 0;
        let mut curvature = None;
        let mut lambda_min = None;
        if check {
            let c = Curvature::new(&obj, &state)?;
            let est = lanczos_min_eig(|v| c.apply(&state, v), q, &cfg.lanczos)?;
            lambda_min = Some(est.value);
            phase = if est.value >= cfg.switch_threshold {
                Phase::Newton
            } else {
                Phase::Adam
            };
            curvature = Some(c);
        }
        trajectory.push(TrajectoryRow {
            step,
            phase,
            loss: state.loss,
            grad_norm,
            lambda_min,
        });
        on_row(&trajectory[step]);

        if grad_norm < cfg.grad_tol {
            return Ok((state.w, StopReason::GradientTolerance));
        }
        if state.loss < best {
            best = state.loss;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                return Ok((state.w, StopReason::Patience));
            }
        }
        if step == cfg.max_steps {
            break;
        }

        state = match phase {
            Phase::Adam => {
                let dir = adam.direction(&grad, cfg);
                obj.solve(&step_by(&state.w, &dir, 1.0), Some(&state))?
            }
            Phase::Newton => {
                let c = match curvature {
                    Some(c) => c,
                    None => Curvature::new(&obj, &state)?,
                };
                let rhs: Vec<f64> = grad.iter().map(|g| -g).collect();
                let sol = cg_solve(
                    |v| {
                        let mut hv = c.apply(&state, v)?;
                        hv.iter_mut().zip(v).for_each(|(h, x)| *h += cfg.ridge * x);
                        Ok(hv)
                    },
                    &rhs,
                    cfg.newton_cg_tol,
                    cfg.newton_cg_iters,
                )?;
                let mut dir = sol.solution;
                let mut slope = dot(&grad, &dir);
                if !(slope < 0.0) {
                    dir = rhs;
                    slope = -grad_norm * grad_norm;
                }
                match armijo(&obj, &state, &dir, slope, cfg)? {
                    Some(next) => next,
                    None => return Ok((state.w, StopReason::LineSearchFailed)),
                }
            }
        };
    }
    Ok((state.w, StopReason::MaxSteps))
}

fn armijo(obj: &Objective, s: &State, dir: &[f64], slope: f64, cfg: &DemoConfig) -> Result<Option<State>> {
    let mut t = cfg.newton_step;
    for _ in 0..=cfg.max_backtracks {
        let trial = obj.solve(&step_by(&s.w, dir, t), Some(s));
        if let Ok(trial) = trial {
            if trial.loss.is_finite() && trial.loss < s.loss && trial.loss <= s.loss + cfg.armijo_c * t * slope {
                return Ok(Some(trial));
            }
        }
        t *= cfg.armijo_beta;
    }
    Ok(None)
}

/// CSV header of the trajectory file.
pub const TRAJECTORY_HEADER: [&str; 5] = ["step", "phase", "loss", "grad_norm", "lambda_min"];

pub fn write_trajectory_csv<W: Write>(rows: &[TrajectoryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRAJECTORY_HEADER)?;
    for r in rows {
        w.write_record([
            r.step.to_string(),
            r.phase.as_str().to_string(),
            format!("{:e}", r.loss),
            format!("{:e}", r.grad_norm),
            r.lambda_min.map(|v| format!("{v:e}")).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectory_csv<R: std::io::Read>(input: R) -> Result<Vec<TrajectoryRow>> {
    let mut rdr = csv::Reader::from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != TRAJECTORY_HEADER {
        return Err(Error::Format(format!("unexpected trajectory header {header:?}")));
    }
    let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| Error::Format(format!("bad number {s:?}"))) };
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        rows.push(TrajectoryRow {
            step: rec[0].parse().map_err(|_| Error::Format(format!("bad step {:?}", &rec[0])))?,
            phase: Phase::parse(&rec[1])?,
            loss: num(&rec[2])?,
            grad_norm: num(&rec[3])?,
            lambda_min: if rec[4].is_empty() { None } else { Some(num(&rec[4])?) },
        });
    }
    Ok(rows)
}

/// Violations of the switching rule and of Newton monotonicity found in a trajectory.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrajectoryAudit {
    /// Steps whose eigenvalue presence disagrees with the check cadence.
    pub cadence_errors: Vec<usize>,
    /// Steps whose phase disagrees with the latest eigenvalue and threshold.
    pub switch_errors: Vec<usize>,
    /// Newton steps after which the loss did not strictly decrease.
    pub newton_increases: Vec<usize>,
    pub newton_steps: usize,
}

impl TrajectoryAudit {
    pub fn ok(&self) -> bool {
        self.cadence_errors.is_empty() && self.switch_errors.is_empty() && self.newton_increases.is_empty()
    }
}

/// Checks a trajectory against the cadence, threshold and Armijo rules.
pub fn audit_trajectory(rows: &[TrajectoryRow], check_every: usize, threshold: f64) -> TrajectoryAudit {
    let mut audit = TrajectoryAudit::default();
    let mut last = None;
    for (k, r) in rows.iter().enumerate() {
        if r.step != k || (r.step % check_every == 0) != r.lambda_min.is_some() {
            audit.cadence_errors.push(r.step);
        }
        if let Some(l) = r.lambda_min {
            last = Some(l);
        }
        let expected = match last {
            Some(l) if l >= threshold => Phase::Newton,
            _ => Phase::Adam,
        };
        if r.phase != expected {
            audit.switch_errors.push(r.step);
        }
        if r.phase == Phase::Newton {
            if let Some(next) = rows.get(k + 1) {
                audit.newton_steps += 1;
                if !(next.loss < r.loss) {
                    audit.newton_increases.push(r.step);
                }
            }
        }
    }
    audit
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(step: usize, phase: Phase, loss: f64, lambda: Option<f64>) -> TrajectoryRow {
        TrajectoryRow {
            step,
            phase,
            loss,
            grad_norm: 1.0,
            lambda_min: lambda,
        }
    }

    #[test]
    fn generated_problem_shapes_and_noise_free_identity() {
        let cfg = DemoConfig {
            n: 50,
            noise: 0.0,
            permute: false,
            identity_target: true,
            ..Default::default()
        };
        let p = generate_problem(&cfg).unwrap();
        assert_eq!(p.design.rows(), 50);
        assert_eq!(p.targets.points(), &p.design);
        assert_eq!(p.w_star, Matrix::identity(5));
    }

    #[test]
    fn features_are_standardised() {
        let x = synthetic_features(&mut Rng::new(3), 400, 3);
        for t in 0..3 {
            let c = x.column(t);
            let mean = c.iter().sum::<f64>() / 400.0;
            let var = c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 400.0;
            assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn permutation_preserves_the_multiset() {
        let base = DemoConfig {
            n: 30,
            noise: 0.0,
            ..Default::default()
        };
        let a = generate_problem(&DemoConfig {
            permute: false,
            ..base.clone()
        })
        .unwrap();
        let b = generate_problem(&base).unwrap();
        let key = |m: &Matrix| {
            let mut v: Vec<Vec<u64>> = (0..m.rows()).map(|i| m.row(i).iter().map(|x| x.to_bits()).collect()).collect();
            v.sort();
            v
        };
        assert_eq!(key(a.targets.points()), key(b.targets.points()));
        assert_ne!(a.targets.points(), b.targets.points());
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![
            row(0, Phase::Adam, 1.5, Some(-0.25)),
            row(1, Phase::Adam, 1.25, None),
            row(2, Phase::Newton, 0.1, None),
        ];
        let mut buf = Vec::new();
        write_trajectory_csv(&rows, &mut buf).unwrap();
        assert!(buf.starts_with(b"step,phase,loss,grad_norm,lambda_min\n"));
        assert_eq!(read_trajectory_csv(&buf[..]).unwrap(), rows);
    }

    #[test]
    fn audit_flags_each_rule() {
        let good = vec![
            row(0, Phase::Adam, 3.0, Some(-1.0)),
            row(1, Phase::Adam, 2.5, None),
            row(2, Phase::Newton, 2.0, Some(0.5)),
        ];
        assert!(audit_trajectory(&good[..2], 2, 1e-3).ok());
        let a = audit_trajectory(&good, 2, 1e-3);
        assert!(a.ok() && a.newton_steps == 0);

        let mut bad = good.clone();
        bad[1].lambda_min = Some(0.0);
        assert_eq!(audit_trajectory(&bad, 2, 1e-3).cadence_errors, vec![1]);

        let mut bad = good.clone();
        bad[1].phase = Phase::Newton;
        assert_eq!(audit_trajectory(&bad, 2, 1e-3).switch_errors, vec![1]);

        let rows = vec![
            row(0, Phase::Newton, 1.0, Some(1e-3)),
            row(1, Phase::Newton, 1.0, None),
        ];
        let a = audit_trajectory(&rows, 2, 1e-3);
        assert_eq!(a.newton_increases, vec![0]);
        assert!(a.switch_errors.is_empty());
    }
}

