//! Primal-dual interior point method for `min −bᵀg + ½gᵀQg` subject to `g ≥ 0`.
//!
//! Newton directions come from the normal equations
//! `(Q + G⁻¹S)Δg = r₁ + G⁻¹r₂` with `r₁ = b − Qg + s`, followed by
//! `Δs = G⁻¹(r₂ − SΔg)`. Each iteration takes an affine-scaling predictor, a
//! centering corrector, and up to `n_correctors` centrality correctors
//! that push complementarity products into `[γμ, μ/γ]`.

pub mod pcg;
pub mod precond;
pub mod spectrum;

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::geometry::Geometry;
use crate::model::{AttenuationCoeffs, DualEnergyOperator, ImagePair, RegWeights, SinogramPair};
use crate::par::{dot, norm2, norm_inf};
use crate::projector::estimate_rho;

pub use pcg::{pcg_solve, pcg_solve_with, PcgOutcome, PcgSettings};
pub use precond::{
    base_block, build_preconditioner, precond_apply, precond_apply_into, PrecondDiagonals,
};
pub use spectrum::{separation_report, spectrum_bound};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IpmConfig {
    pub tol: f64,
    pub max_iters: usize,
    pub n_correctors: usize,
    pub neighbourhood_gamma: f64,
    pub pcg_tol: f64,
    pub pcg_max_iters: usize,
    pub step_fraction: f64,
    /// `σ = (μ_aff/μ)^sigma_power`.
    pub sigma_power: f64,
    /// Trial step for a centrality corrector: `min(1, boost·α + 0.1)`.
    pub corrector_step_boost: f64,
    /// A corrector is kept only if it grows the step by this factor.
    pub corrector_min_gain: f64,
    /// Linear solves must also bring `‖r‖₂` below this fraction of
    /// `max(‖r₁‖, tol·‖b‖)`; the inexact residual feeds straight into the next
    /// dual residual.
    pub residual_cap_factor: f64,
    /// Stop each linear solve once the residual cap alone is met.
    pub early_termination: bool,
    pub preconditioned: bool,
    /// Diagonal samples for `ρ`; `None` uses `min(N², 256)`.
    pub rho_samples: Option<usize>,
    pub seed: u64,
}

impl Default for IpmConfig {
    fn default() -> Self {
        IpmConfig {
            tol: 1e-8,
            max_iters: 100,
            n_correctors: 3,
            neighbourhood_gamma: 0.2,
            pcg_tol: 1e-6,
            pcg_max_iters: 2000,
            step_fraction: 0.995,
            sigma_power: 3.0,
            corrector_step_boost: 1.5,
            corrector_min_gain: 1.01,
            residual_cap_factor: 0.1,
            early_termination: false,
            preconditioned: true,
            rho_samples: None,
            seed: 0,
        }
    }
}

impl IpmConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(format!("ipm: {m}")));
        if !(self.tol > 0.0) {
            return bad("tol must be positive");
        }
        if !(self.neighbourhood_gamma > 0.0 && self.neighbourhood_gamma < 1.0) {
            return bad("neighbourhood_gamma must lie in (0,1)");
        }
        if !(self.step_fraction > 0.0 && self.step_fraction < 1.0) {
            return bad("step_fraction must lie in (0,1)");
        }
        if !(self.pcg_tol > 0.0) || self.pcg_max_iters == 0 || self.max_iters == 0 {
            return bad("pcg_tol, pcg_max_iters and max_iters must be positive");
        }
        if !(self.sigma_power > 0.0
            && self.corrector_step_boost >= 1.0
            && self.corrector_min_gain >= 1.0)
        {
            return bad("invalid sigma/corrector parameters");
        }
        if !(self.residual_cap_factor > 0.0) {
            return bad("residual_cap_factor must be positive");
        }
        Ok(())
    }
}

/// A convex QP in the form handled by [`solve_qp`]. The unknown has even
/// length `2n` and pairs `(i, n + i)` share a preconditioner block.
pub trait QpProblem: Sync {
    fn dim(&self) -> usize;
    /// `b` in `−bᵀg`.
    fn linear(&self) -> &[f64];
    fn apply_q(&self, x: &[f64], out: &mut [f64]);
    fn preconditioner(&self, g: &[f64], s: &[f64]) -> Result<PrecondDiagonals>;
}

/// The material-separation QP with `b = 𝒜ᵀm`.
pub struct TomographyQp<'a> {
    op: &'a DualEnergyOperator,
    weights: RegWeights,
    b: Vec<f64>,
    rho_low: f64,
    rho_high: f64,
}

impl<'a> TomographyQp<'a> {
    pub fn new(
        op: &'a DualEnergyOperator,
        m: &SinogramPair,
        weights: RegWeights,
        rho_samples: Option<usize>,
        seed: u64,
    ) -> Result<Self> {
        check_len("low-energy data", op.low().n_rows(), m.low.as_slice().len())?;
        check_len(
            "high-energy data",
            op.high().n_rows(),
            m.high.as_slice().len(),
        )?;
        let b = op.transpose(m.low.as_slice(), m.high.as_slice());
        let samples = rho_samples.unwrap_or_else(|| op.n_half().min(256));
        let rho_low = estimate_rho(op.low().as_ref(), samples, seed);
        let rho_high = if op.is_shared() {
            rho_low
        } else {
            estimate_rho(op.high().as_ref(), samples, seed)
        };
        Ok(TomographyQp {
            op,
            weights,
            b,
            rho_low,
            rho_high,
        })
    }

    pub fn operator(&self) -> &DualEnergyOperator {
        self.op
    }

    pub fn weights(&self) -> &RegWeights {
        &self.weights
    }

    pub fn rho(&self) -> (f64, f64) {
        (self.rho_low, self.rho_high)
    }
}

impl QpProblem for TomographyQp<'_> {
    fn dim(&self) -> usize {
        self.op.dim()
    }

    fn linear(&self) -> &[f64] {
        &self.b
    }

    fn apply_q(&self, x: &[f64], out: &mut [f64]) {
        self.op.apply_q_into(&self.weights, x, out);
    }

    fn preconditioner(&self, g: &[f64], s: &[f64]) -> Result<PrecondDiagonals> {
        build_preconditioner(
            g,
            s,
            self.op.coeffs(),
            &self.weights,
            self.rho_low,
            self.rho_high,
        )
    }
}

/// Primal-dual pair at the start of an iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IpmState {
    pub iteration: usize,
    pub g: Vec<f64>,
    pub s: Vec<f64>,
    pub mu: f64,
    pub dual_residual: f64,
}

impl IpmState {
    pub fn new(g: Vec<f64>, s: Vec<f64>) -> Self {
        let mu = complementarity(&g, &s);
        IpmState {
            iteration: 0,
            g,
            s,
            mu,
            dual_residual: f64::NAN,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub mu: f64,
    pub dual_residual: f64,
    pub pcg_iters: usize,
    pub cumulative_time_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct IpmReport {
    pub records: Vec<IterationRecord>,
    pub converged: bool,
    pub iterations: usize,
    pub total_pcg_iters: usize,
    pub final_mu: f64,
    pub final_dual_residual: f64,
    pub rho_low: f64,
    pub rho_high: f64,
}

impl IpmReport {
    /// `iteration,mu,dual_residual,pcg_iters,cumulative_time_ms`. With
    /// `wall_clock == false` the time column is written as 0.
    pub fn write_csv<W: Write>(&self, mut w: W, wall_clock: bool) -> Result<()> {
        writeln!(w, "iteration,mu,dual_residual,pcg_iters,cumulative_time_ms")?;
        for r in &self.records {
            let t = if wall_clock {
                r.cumulative_time_ms
            } else {
                0.0
            };
            writeln!(
                w,
                "{},{:?},{:?},{},{:?}",
                r.iteration, r.mu, r.dual_residual, r.pcg_iters, t
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct IpmOutcome {
    pub g: Vec<f64>,
    pub s: Vec<f64>,
    pub report: IpmReport,
}

fn complementarity(g: &[f64], s: &[f64]) -> f64 {
    dot(g, s) / g.len().max(1) as f64
}

/// `(‖b − Qg + s‖ / ‖b‖, μ)`; a zero `b` is normalized by 1.
pub fn kkt_residuals(problem: &dyn QpProblem, g: &[f64], s: &[f64]) -> (f64, f64) {
    let mut r = vec![0.0; problem.dim()];
    dual_residual_into(problem, g, s, &mut r);
    let bn = norm2(problem.linear());
    let scale = if bn > 0.0 { bn } else { 1.0 };
    (norm2(&r) / scale, complementarity(g, s))
}

fn dual_residual_into(problem: &dyn QpProblem, g: &[f64], s: &[f64], r: &mut [f64]) {
    problem.apply_q(g, r);
    for ((ri, bi), si) in r.iter_mut().zip(problem.linear()).zip(s) {
        *ri = bi - *ri + si;
    }
}

/// Largest `t ≤ 1/fraction` keeping `x + t·dx ≥ 0` and `z + t·dz ≥ 0`.
fn max_step(x: &[f64], dx: &[f64], z: &[f64], dz: &[f64]) -> f64 {
    let mut t = f64::INFINITY;
    for (v, d) in x.iter().zip(dx).chain(z.iter().zip(dz)) {
        if *d < 0.0 {
            t = t.min(-v / d);
        }
    }
    t
}

struct Direction {
    dg: Vec<f64>,
    ds: Vec<f64>,
}

impl Direction {
    fn step(&self, g: &[f64], s: &[f64], fraction: f64) -> f64 {
        (fraction * max_step(g, &self.dg, s, &self.ds)).min(1.0)
    }
}

struct Newton<'a> {
    problem: &'a dyn QpProblem,
    cfg: &'a IpmConfig,
    g: &'a [f64],
    s: &'a [f64],
    ratio: Vec<f64>,
    precond: Option<PrecondDiagonals>,
    reference: Option<f64>,
    cap: f64,
    pcg_iters: usize,
}

impl Newton<'_> {
    /// Solves `(Q + G⁻¹S)Δg = r₁ + G⁻¹r₂` and recovers `Δs`.
    fn solve(&mut self, r1: Option<&[f64]>, r2: &[f64]) -> Result<Direction> {
        let n = self.g.len();
        let mut rhs: Vec<f64> = (0..n).map(|i| r2[i] / self.g[i]).collect();
        if let Some(r1) = r1 {
            rhs.iter_mut().zip(r1).for_each(|(a, b)| *a += b);
        }
        let ratio = &self.ratio;
        let problem = self.problem;
        let matvec = |v: &[f64], out: &mut [f64]| {
            problem.apply_q(v, out);
            for i in 0..v.len() {
                out[i] += ratio[i] * v[i];
            }
        };
        let mut dg = vec![0.0; n];
        let settings = PcgSettings {
            rel_tol: self.cfg.pcg_tol,
            max_iters: self.cfg.pcg_max_iters,
            reference: self.reference,
            residual_cap: Some(self.cap),
            early_exit: self.cfg.early_termination,
        };
        let out = match &self.precond {
            Some(p) => pcg_solve_with(
                matvec,
                |r, z| precond_apply_into(p, r, z),
                &rhs,
                &mut dg,
                &settings,
            )?,
            None => pcg_solve_with(
                matvec,
                |r: &[f64], z: &mut [f64]| z.copy_from_slice(r),
                &rhs,
                &mut dg,
                &settings,
            )?,
        };
        if self.reference.is_none() {
            // Later right-hand sides of this iteration are measured against the first.
            self.reference = Some(match &self.precond {
                Some(p) => dot(&rhs, &precond_apply(p, &rhs)).sqrt(),
                None => norm2(&rhs),
            });
        }
        self.pcg_iters += out.iterations;
        if !out.converged {
            log::debug!(
                "pcg stopped at cap {} with residual {:.3e}",
                self.cfg.pcg_max_iters,
                out.residual_norm
            );
        }
        let ds = (0..n)
            .map(|i| (r2[i] - self.s[i] * dg[i]) / self.g[i])
            .collect();
        Ok(Direction { dg, ds })
    }
}

/// Solve a QP from the default starting point.
pub fn solve_qp(
    problem: &dyn QpProblem,
    cfg: &IpmConfig,
    observer: Option<&mut dyn FnMut(&IpmState)>,
) -> Result<IpmOutcome> {
    cfg.validate()?;
    let n = problem.dim();
    if n == 0 || n % 2 != 0 {
        return Err(Error::InvalidParameter(format!(
            "QP dimension {n} must be even and positive"
        )));
    }
    let start = (norm_inf(problem.linear()) + 1.0).sqrt();
    let state = IpmState::new(vec![start; n], vec![start; n]);
    solve_qp_from(problem, cfg, state, observer)
}

/// Solve a QP from a strictly positive starting pair.
pub fn solve_qp_from(
    problem: &dyn QpProblem,
    cfg: &IpmConfig,
    mut state: IpmState,
    mut observer: Option<&mut dyn FnMut(&IpmState)>,
) -> Result<IpmOutcome> {
    cfg.validate()?;
    let n = problem.dim();
    if state.g.len() != n || state.s.len() != n {
        return Err(Error::DimensionMismatch {
            context: "ipm starting point",
            expected: n,
            actual: state.g.len(),
        });
    }
    if state.g.iter().chain(&state.s).any(|v| !(*v > 0.0)) {
        return Err(Error::NonPositiveIterate("starting point".into()));
    }
    let clock = Instant::now();
    let b_norm = norm2(problem.linear());
    let b_scale = if b_norm > 0.0 { b_norm } else { 1.0 };
    let gamma = cfg.neighbourhood_gamma;
    let mut report = IpmReport::default();
    let mut r1 = vec![0.0; n];
    let mut best: Option<(f64, Vec<f64>, Vec<f64>, f64, f64)> = None;
    let mut last_pcg = 0;

    loop {
        dual_residual_into(problem, &state.g, &state.s, &mut r1);
        let r1_norm = norm2(&r1);
        state.mu = complementarity(&state.g, &state.s);
        state.dual_residual = r1_norm / b_scale;
        let merit = state.dual_residual.max(state.mu);
        if best.as_ref().is_none_or(|b| merit < b.0) {
            best = Some((
                merit,
                state.g.clone(),
                state.s.clone(),
                state.mu,
                state.dual_residual,
            ));
        }
        if state.iteration > 0 {
            report.records.push(IterationRecord {
                iteration: state.iteration,
                mu: state.mu,
                dual_residual: state.dual_residual,
                pcg_iters: last_pcg,
                cumulative_time_ms: clock.elapsed().as_secs_f64() * 1e3,
            });
        }
        if state.dual_residual < cfg.tol && state.mu < cfg.tol {
            report.converged = true;
            break;
        }
        if state.iteration >= cfg.max_iters {
            break;
        }
        state.iteration += 1;
        if let Some(obs) = observer.as_mut() {
            obs(&state);
        }

        let (dir, alpha, sigma, iters) = {
            let (g, s) = (&state.g, &state.s);
            let mu = state.mu;
            let mut newton = Newton {
                problem,
                cfg,
                g,
                s,
                ratio: g.iter().zip(s).map(|(a, b)| b / a).collect(),
                precond: if cfg.preconditioned {
                    Some(problem.preconditioner(g, s)?)
                } else {
                    None
                },
                reference: None,
                cap: cfg.residual_cap_factor * r1_norm.max(cfg.tol * b_scale),
                pcg_iters: 0,
            };

            // Affine-scaling predictor.
            let r2: Vec<f64> = g.iter().zip(s).map(|(a, b)| -a * b).collect();
            let aff = newton.solve(Some(&r1), &r2)?;
            let alpha_aff = max_step(g, &aff.dg, s, &aff.ds).min(1.0);
            let mu_aff = (0..n)
                .map(|i| (g[i] + alpha_aff * aff.dg[i]) * (s[i] + alpha_aff * aff.ds[i]))
                .sum::<f64>()
                / n as f64;
            let sigma = (mu_aff / mu).max(0.0).powf(cfg.sigma_power).min(1.0);
            let target = sigma * mu;

            // Centering corrector with the second-order term.
            let r2c: Vec<f64> = (0..n).map(|i| target - aff.dg[i] * aff.ds[i]).collect();
            let cor = newton.solve(None, &r2c)?;
            let mut dir = Direction {
                dg: aff.dg.iter().zip(&cor.dg).map(|(a, b)| a + b).collect(),
                ds: aff.ds.iter().zip(&cor.ds).map(|(a, b)| a + b).collect(),
            };
            let mut alpha = dir.step(g, s, cfg.step_fraction);

            // Centrality correctors towards [γσμ, σμ/γ].
            for _ in 0..cfg.n_correctors {
                if alpha >= 1.0 {
                    break;
                }
                let trial = (cfg.corrector_step_boost * alpha + 0.1).min(1.0);
                let (lo, hi) = (gamma * target, target / gamma);
                let t: Vec<f64> = (0..n)
                    .map(|i| {
                        let v = (g[i] + trial * dir.dg[i]) * (s[i] + trial * dir.ds[i]);
                        if v < lo {
                            lo - v
                        } else if v > hi {
                            (hi - v).max(-hi)
                        } else {
                            0.0
                        }
                    })
                    .collect();
                let c = newton.solve(None, &t)?;
                let cand = Direction {
                    dg: dir.dg.iter().zip(&c.dg).map(|(a, b)| a + b).collect(),
                    ds: dir.ds.iter().zip(&c.ds).map(|(a, b)| a + b).collect(),
                };
                let alpha_new = cand.step(g, s, cfg.step_fraction);
                if alpha_new >= cfg.corrector_min_gain * alpha {
                    dir = cand;
                    alpha = alpha_new;
                } else {
                    break;
                }
            }

            (dir, alpha, sigma, newton.pcg_iters)
        };
        report.total_pcg_iters += iters;
        last_pcg = iters;
        let (g, s) = (&mut state.g, &mut state.s);
        for i in 0..n {
            g[i] += alpha * dir.dg[i];
            s[i] += alpha * dir.ds[i];
        }
        if g.iter().chain(s.iter()).any(|v| !(*v > 0.0)) {
            return Err(Error::NonPositiveIterate(format!(
                "iteration {} with step {alpha}",
                state.iteration
            )));
        }
        log::trace!(
            "ipm {}: mu={:.3e} res={:.3e} sigma={sigma:.3e} alpha={alpha:.3} pcg={iters}",
            state.iteration,
            state.mu,
            state.dual_residual
        );
    }

    report.iterations = state.iteration;
    let (g, s) = if report.converged {
        report.final_mu = state.mu;
        report.final_dual_residual = state.dual_residual;
        (state.g, state.s)
    } else {
        let (_, g, s, mu, res) = best.expect("at least one iterate");
        report.final_mu = mu;
        report.final_dual_residual = res;
        (g, s)
    };
    Ok(IpmOutcome { g, s, report })
}

/// Reconstruct both material images from dual-energy data.
pub fn ipm_solve(
    m: &SinogramPair,
    coeffs: &AttenuationCoeffs,
    weights: &RegWeights,
    geo_low: &Geometry,
    geo_high: &Geometry,
    cfg: &IpmConfig,
) -> Result<(ImagePair, IpmReport)> {
    let op = DualEnergyOperator::from_geometries(*coeffs, geo_low, geo_high)?;
    solve_tomography(&op, m, weights, cfg, None)
}

/// [`ipm_solve`] on a prebuilt operator, optionally observing each iterate.
pub fn solve_tomography(
    op: &DualEnergyOperator,
    m: &SinogramPair,
    weights: &RegWeights,
    cfg: &IpmConfig,
    observer: Option<&mut dyn FnMut(&IpmState)>,
) -> Result<(ImagePair, IpmReport)> {
    let qp = TomographyQp::new(op, m, *weights, cfg.rho_samples, cfg.seed)?;
    let out = solve_qp(&qp, cfg, observer)?;
    let mut report = out.report;
    (report.rho_low, report.rho_high) = qp.rho();
    let n = (op.n_half() as f64).sqrt().round() as usize;
    Ok((ImagePair::from_stacked(n, out.g)?, report))
}
