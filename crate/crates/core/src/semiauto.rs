//! Semi-automatic summary statistics.
//!
//! Each target functional `g(θ)` gets exactly one constructed statistic: the
//! fitted mean of `g(θ)` regressed on a basis expansion `F(s)` of the raw
//! statistics, fitted on draws from a pilot-truncated prior. The pipeline is
//! pilot ABC → truncation box → fresh truncated batch → projector → main
//! batch → rejection in projected space → optional regression adjustment.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::abc::{
    self, Acceptance, FitDiagnostics, PriorSpec, RejectionOptions, SimulationBatch, Simulator, TruncationRegion,
    WeightedPosterior,
};
use crate::config::{PilotStatistics, RunConfig};
use crate::error::{Error, Result};
use crate::mat::Matrix;
use crate::models::{gpd_quantile, ModelFixture};
use crate::regression::{self, BasisSpec};
use crate::rng::{derive_seed, draw_rng};

/// Prior draws used to check that targets evaluate finite.
pub const TARGET_PROBE: usize = 1_000;

pub type TargetFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum TargetKind {
    Coordinate(usize),
    /// GPD quantile at level `tau` of θ = (σ, ξ).
    GpdQuantile { tau: f64 },
    Custom(TargetFn),
}

/// A named scalar function of the parameters.
///
/// Built-in kinds serialise as `coordinate:I` and `gpd_quantile:TAU`;
/// custom targets exist only in memory.
#[derive(Clone)]
pub struct TargetFunctional {
    pub name: String,
    pub kind: TargetKind,
}

impl TargetFunctional {
    pub fn coordinate(i: usize) -> Self {
        Self {
            name: format!("coordinate:{i}"),
            kind: TargetKind::Coordinate(i),
        }
    }

    pub fn gpd_quantile(tau: f64) -> Self {
        Self {
            name: format!("gpd_quantile:{tau}"),
            kind: TargetKind::GpdQuantile { tau },
        }
    }

    pub fn custom(name: impl Into<String>, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            name: name.into(),
            kind: TargetKind::Custom(Arc::new(f)),
        }
    }

    pub fn eval(&self, theta: &[f64]) -> f64 {
        match &self.kind {
            TargetKind::Coordinate(i) => theta[*i],
            TargetKind::GpdQuantile { tau } => gpd_quantile(*tau, theta[0], theta[1]),
            TargetKind::Custom(f) => f(theta),
        }
    }

    /// Smallest parameter dimension the target can be applied to.
    pub fn min_param_dim(&self) -> usize {
        match &self.kind {
            TargetKind::Coordinate(i) => i + 1,
            TargetKind::GpdQuantile { .. } => 2,
            TargetKind::Custom(_) => 0,
        }
    }
}

impl fmt::Debug for TargetFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TargetFunctional({})", self.name)
    }
}

impl fmt::Display for TargetFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

impl PartialEq for TargetFunctional {
    fn eq(&self, other: &Self) -> bool {
        let same_kind = match (&self.kind, &other.kind) {
            (TargetKind::Coordinate(a), TargetKind::Coordinate(b)) => a == b,
            (TargetKind::GpdQuantile { tau: a }, TargetKind::GpdQuantile { tau: b }) => a == b,
            (TargetKind::Custom(a), TargetKind::Custom(b)) => Arc::ptr_eq(a, b),
            _ => false,
        };
        same_kind && self.name == other.name
    }
}

impl FromStr for TargetFunctional {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = s
            .split_once(':')
            .ok_or_else(|| Error::invalid(format!("target `{s}` should look like kind:arg")))?;
        match kind.trim() {
            "coordinate" => arg
                .trim()
                .parse()
                .map(TargetFunctional::coordinate)
                .map_err(|_| Error::invalid(format!("bad coordinate index in `{s}`"))),
            "gpd_quantile" => match arg.trim().parse::<f64>() {
                Ok(tau) if tau > 0.0 && tau < 1.0 => Ok(TargetFunctional::gpd_quantile(tau)),
                _ => Err(Error::invalid(format!("gpd_quantile level in `{s}` must lie in (0, 1)"))),
            },
            other => Err(Error::invalid(format!("unknown target kind `{other}`"))),
        }
    }
}

impl Serialize for TargetFunctional {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        if let TargetKind::Custom(_) = self.kind {
            return Err(serde::ser::Error::custom(format!(
                "custom target `{}` cannot be serialised",
                self.name
            )));
        }
        ser.serialize_str(&self.name)
    }
}

impl<'de> Deserialize<'de> for TargetFunctional {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        s.parse().map_err(|e: Error| serde::de::Error::custom(e.to_string()))
    }
}

/// `M×p′` matrix whose column `j` is target `j` applied to each row.
pub fn evaluate_targets(thetas: &Matrix, targets: &[TargetFunctional]) -> Result<Matrix> {
    if targets.is_empty() {
        return Err(Error::invalid("no target functionals"));
    }
    for t in targets {
        if t.min_param_dim() > thetas.cols() {
            return Err(Error::invalid(format!(
                "target {t} needs {} parameters, have {}",
                t.min_param_dim(),
                thetas.cols()
            )));
        }
    }
    let out = Matrix::from_fn(thetas.rows(), targets.len(), |i, j| targets[j].eval(thetas.row(i)));
    if !out.is_finite() {
        return Err(Error::NonFinite("target functional values".into()));
    }
    Ok(out)
}

/// Checks that every target is finite on a probe sample from the prior.
pub fn check_targets(targets: &[TargetFunctional], prior: &PriorSpec, seed: u64) -> Result<()> {
    let sampler = prior.sampler()?;
    let probe_seed = derive_seed(seed, "target-probe");
    let rows: Vec<Vec<f64>> = (0..TARGET_PROBE)
        .map(|i| sampler.sample_untruncated(&mut draw_rng(probe_seed, i as u64)))
        .collect();
    let thetas = Matrix::from_rows(&rows)?;
    evaluate_targets(&thetas, targets).map(|_| ())
}

/// Affine map `s ↦ intercept + coefficients·f(s)`, one output per target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SummaryProjector {
    /// Content hash of everything below.
    pub id: String,
    pub basis: BasisSpec,
    pub input_dim: usize,
    pub intercept: Vec<f64>,
    /// `p′×q`.
    pub coefficients: Matrix,
    pub targets: Vec<String>,
    pub diagnostics: FitDiagnostics,
    /// Condition number of the constructed summaries over the fit batch.
    pub summary_condition: f64,
    pub region: Option<TruncationRegion>,
}

impl SummaryProjector {
    pub fn output_dim(&self) -> usize {
        self.intercept.len()
    }

    fn content_id(&self) -> String {
        let mut copy = self.clone();
        copy.id = String::new();
        let json = serde_json::to_vec(&copy).expect("projector serialises");
        hex::encode(&Sha256::digest(&json)[..8])
    }

    fn seal(mut self) -> Self {
        self.id = self.content_id();
        self
    }

    pub fn with_region(self, region: Option<TruncationRegion>) -> Self {
        SummaryProjector { region, ..self }.seal()
    }

    /// Projects every row of `stats`.
    pub fn project_matrix(&self, stats: &Matrix) -> Result<Matrix> {
        let mut data = Vec::with_capacity(stats.rows() * self.output_dim());
        for row in stats.iter_rows() {
            data.extend(project(self, row)?);
        }
        Matrix::new(stats.rows(), self.output_dim(), data)
    }
}

/// `intercept + coefficients·f(s)`.
pub fn project(projector: &SummaryProjector, s: &[f64]) -> Result<Vec<f64>> {
    if s.len() != projector.input_dim {
        return Err(Error::DimensionMismatch {
            context: "projector input",
            expected: projector.input_dim,
            got: s.len(),
        });
    }
    let f = regression::expand_basis(s, &projector.basis)?;
    let mut out = projector.coefficients.matvec(&f)?;
    for (o, a) in out.iter_mut().zip(&projector.intercept) {
        *o += a;
    }
    Ok(out)
}

/// Regresses the targets' values on the basis-expanded statistics.
pub fn construct_projector(
    batch: &SimulationBatch,
    targets: &[TargetFunctional],
    basis: &BasisSpec,
    ridge_lambda: f64,
) -> Result<SummaryProjector> {
    basis.validate(batch.stat_dim())?;
    let q = basis.output_dim(batch.stat_dim());
    if batch.len() < q + 2 {
        return Err(Error::InsufficientDraws {
            stats: q,
            needed: q + 2,
            got: batch.len(),
        });
    }
    let responses = evaluate_targets(&batch.thetas, targets)?;
    let design = regression::expand_matrix(&batch.stats, basis)?;
    let fit = regression::fit_linear(&design, &responses, ridge_lambda)?;
    let mut projector = SummaryProjector {
        id: String::new(),
        basis: basis.clone(),
        input_dim: batch.stat_dim(),
        intercept: fit.intercept,
        coefficients: fit.coefficients,
        targets: targets.iter().map(|t| t.name.clone()).collect(),
        diagnostics: FitDiagnostics {
            condition_number: fit.condition_number,
            vifs: fit.vifs,
            residual_mss: fit.residual_mss,
        },
        summary_condition: 1.0,
        region: None,
    };
    debug_assert_eq!(projector.output_dim(), targets.len());
    let summaries = projector.project_matrix(&batch.stats)?;
    projector.summary_condition = regression::condition_diagnostics(&summaries)?.0;
    Ok(projector.seal())
}

/// Posterior-mean estimate of one target from a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetEstimate {
    pub target: String,
    pub estimate: f64,
    /// Posterior sd over the square root of the effective sample size.
    pub mc_sd: f64,
    pub oracle: Option<f64>,
    pub abs_error: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct PilotOutcome {
    pub posterior: WeightedPosterior,
    pub region: TruncationRegion,
}

#[derive(Debug, Clone)]
pub struct ConstructOutcome {
    pub batch: SimulationBatch,
    pub projector: SummaryProjector,
}

#[derive(Debug, Clone)]
pub struct InferOutcome {
    pub batch: SimulationBatch,
    /// Projected summaries of every main-batch draw.
    pub summaries: Matrix,
    pub s_obs_projected: Vec<f64>,
    pub posterior: WeightedPosterior,
    pub adjusted: Option<WeightedPosterior>,
    pub estimates: Vec<TargetEstimate>,
}

impl InferOutcome {
    /// The adjusted posterior when present, else the rejection posterior.
    pub fn final_posterior(&self) -> &WeightedPosterior {
        self.adjusted.as_ref().unwrap_or(&self.posterior)
    }
}

/// Everything a complete pipeline run produces.
#[derive(Debug, Clone)]
pub struct SemiautoRun {
    pub config_hash: String,
    pub pilot_batch: SimulationBatch,
    pub pilot: PilotOutcome,
    pub construct: ConstructOutcome,
    pub infer: InferOutcome,
}

/// Stage-by-stage driver for one config and fixture.
pub struct Pipeline<'a> {
    pub config: &'a RunConfig,
    pub fixture: &'a ModelFixture,
    pub prior: PriorSpec,
    pub targets: Vec<TargetFunctional>,
    pub config_hash: String,
}

impl<'a> Pipeline<'a> {
    pub fn new(config: &'a RunConfig, fixture: &'a ModelFixture) -> Result<Self> {
        config.validate()?;
        let prior = config.prior.clone().unwrap_or_else(|| fixture.prior.clone());
        if prior.dim() != fixture.param_dim() {
            return Err(Error::DimensionMismatch {
                context: "prior dimension",
                expected: fixture.param_dim(),
                got: prior.dim(),
            });
        }
        let targets = config.targets.clone().unwrap_or_else(|| fixture.default_targets.clone());
        check_targets(&targets, &prior, config.seed)?;
        Ok(Self {
            config,
            fixture,
            prior,
            targets,
            config_hash: config.hash(),
        })
    }

    pub fn with_targets(mut self, targets: Vec<TargetFunctional>) -> Result<Self> {
        check_targets(&targets, &self.prior, self.config.seed)?;
        self.targets = targets;
        Ok(self)
    }

    fn seed(&self, stage: &str) -> u64 {
        derive_seed(self.config.seed, stage)
    }

    /// Prior predictive batch for the pilot step.
    pub fn simulate_pilot(&self) -> Result<SimulationBatch> {
        abc::simulate_batch(&self.prior, self.fixture, self.config.pilot.m, self.seed("pilot"))
            .map_err(|e| e.in_stage("simulate"))
    }

    pub fn pilot(&self, batch: &SimulationBatch) -> Result<PilotOutcome> {
        self.pilot_inner(batch).map_err(|e| e.in_stage("pilot"))
    }

    fn pilot_inner(&self, batch: &SimulationBatch) -> Result<PilotOutcome> {
        let accept = Acceptance::Fraction(self.config.pilot.accept_fraction);
        let mut opts = RejectionOptions::new(accept);
        opts.seed = self.config.seed;
        let mut posterior = match self.config.pilot.statistics {
            PilotStatistics::Raw => {
                abc::rejection_abc_with(&batch.thetas, &batch.stats, &self.fixture.s_obs, &opts)?
            }
            PilotStatistics::Projected => {
                let proj = construct_projector(batch, &self.targets, &self.config.basis, self.config.ridge_lambda)?;
                let summaries = proj.project_matrix(&batch.stats)?;
                let s_obs = project(&proj, &self.fixture.s_obs)?;
                let mut post = abc::rejection_abc_with(&batch.thetas, &summaries, &s_obs, &opts)?;
                post.provenance.projector_id = Some(proj.id);
                post
            }
        };
        posterior.provenance.stage = "pilot".into();
        posterior.provenance.config_hash = Some(self.config_hash.clone());
        let region = abc::truncation_from_pilot(&posterior, self.config.pilot.expand)?;
        debug_assert!(posterior.thetas.iter_rows().all(|t| region.contains(t)));
        Ok(PilotOutcome { posterior, region })
    }

    pub fn construct(&self, region: &TruncationRegion) -> Result<ConstructOutcome> {
        self.construct_inner(region).map_err(|e| e.in_stage("construct"))
    }

    fn construct_inner(&self, region: &TruncationRegion) -> Result<ConstructOutcome> {
        let prior = self.prior.truncated(region.clone());
        let batch = abc::simulate_batch(&prior, self.fixture, self.config.construct.m, self.seed("construct"))?;
        let projector = construct_projector(&batch, &self.targets, &self.config.basis, self.config.ridge_lambda)?
            .with_region(Some(region.clone()));
        Ok(ConstructOutcome { batch, projector })
    }

    pub fn infer(&self, region: &TruncationRegion, projector: &SummaryProjector) -> Result<InferOutcome> {
        self.infer_inner(region, projector).map_err(|e| e.in_stage("infer"))
    }

    fn infer_inner(&self, region: &TruncationRegion, projector: &SummaryProjector) -> Result<InferOutcome> {
        if projector.targets.len() != self.targets.len()
            || projector.targets.iter().zip(&self.targets).any(|(a, b)| *a != b.name)
        {
            return Err(Error::ProvenanceMismatch(
                "projector targets differ from the configured targets".into(),
            ));
        }
        let prior = self.prior.truncated(region.clone());
        let batch = abc::simulate_batch(&prior, self.fixture, self.config.main.m, self.seed("main"))?;
        let summaries = projector.project_matrix(&batch.stats)?;
        let s_obs_projected = project(projector, &self.fixture.s_obs)?;
        let mut opts = RejectionOptions::new(Acceptance::Fraction(self.config.main.accept_fraction));
        opts.kernel = self.config.main.kernel;
        opts.seed = self.config.seed;
        let mut posterior = abc::rejection_abc_with(&batch.thetas, &summaries, &s_obs_projected, &opts)?;
        posterior.provenance.stage = "infer".into();
        posterior.provenance.projector_id = Some(projector.id.clone());
        posterior.provenance.config_hash = Some(self.config_hash.clone());
        posterior.provenance.diagnostics = Some(projector.diagnostics.clone());

        let adjusted = if self.config.adjust.regression_adjust {
            let accepted = summaries.select_rows(&posterior.acceptance.indices);
            let mut adj = abc::regression_adjust(&posterior, &accepted, &s_obs_projected, self.config.ridge_lambda)?;
            adj.provenance.stage = "regression_adjust".into();
            Some(adj)
        } else {
            None
        };
        let final_post = adjusted.as_ref().unwrap_or(&posterior);
        let estimates = self.estimates(final_post);
        Ok(InferOutcome {
            batch,
            summaries,
            s_obs_projected,
            posterior,
            adjusted,
            estimates,
        })
    }

    /// Posterior-mean estimates of every target, with oracle values when
    /// the fixture prior is in force.
    pub fn estimates(&self, posterior: &WeightedPosterior) -> Vec<TargetEstimate> {
        let ess = posterior.effective_size();
        self.targets
            .iter()
            .map(|t| {
                let estimate = posterior.expectation(|th| t.eval(th));
                let mc_sd = posterior.sd_of(|th| t.eval(th)) / ess.sqrt();
                let oracle = if self.config.prior.is_none() {
                    self.fixture.oracle_mean(t)
                } else {
                    None
                };
                TargetEstimate {
                    target: t.name.clone(),
                    estimate,
                    mc_sd,
                    oracle,
                    abs_error: oracle.map(|o| (estimate - o).abs()),
                }
            })
            .collect()
    }

    /// Runs every stage in order.
    pub fn run(&self) -> Result<SemiautoRun> {
        let pilot_batch = self.simulate_pilot()?;
        let pilot = self.pilot(&pilot_batch)?;
        let construct = self.construct(&pilot.region)?;
        let infer = self.infer(&pilot.region, &construct.projector)?;
        Ok(SemiautoRun {
            config_hash: self.config_hash.clone(),
            pilot_batch,
            pilot,
            construct,
            infer,
        })
    }
}

/// Builds the configured fixture and runs the whole pipeline, persisting
/// every stage's artifacts when the config names an output directory.
pub fn run_semiauto(config: &RunConfig) -> Result<SemiautoRun> {
    let fixture = ModelFixture::build(&config.model)?;
    let run = Pipeline::new(config, &fixture)?.run()?;
    if let Some(dir) = &config.out_dir {
        crate::io::write_run(dir, config, &run)?;
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::FixtureSpec;

    #[test]
    fn target_evaluation() {
        let thetas = Matrix::from_rows(&[vec![1.0, 0.5], vec![2.0, 1e-9]]).unwrap();
        let targets = [
            TargetFunctional::coordinate(0),
            TargetFunctional::gpd_quantile(0.99),
        ];
        let v = evaluate_targets(&thetas, &targets).unwrap();
        assert_eq!(v.col(0), vec![1.0, 2.0]);
        assert!((v[(0, 1)] - 18.0).abs() < 1e-12);
        assert!((v[(1, 1)] - 2.0 * 4.60517).abs() < 2e-5);
        assert!(evaluate_targets(&thetas, &[TargetFunctional::coordinate(2)]).is_err());
        assert!(evaluate_targets(&thetas, &[]).is_err());
    }

    #[test]
    fn target_string_forms() {
        let t: TargetFunctional = "gpd_quantile:0.99".parse().unwrap();
        assert_eq!(t, TargetFunctional::gpd_quantile(0.99));
        assert_eq!(serde_json::to_string(&t).unwrap(), "\"gpd_quantile:0.99\"");
        assert!("gpd_quantile:1.5".parse::<TargetFunctional>().is_err());
        assert!("median".parse::<TargetFunctional>().is_err());
        let c = TargetFunctional::custom("sq", |t| t[0] * t[0]);
        assert!(serde_json::to_string(&c).is_err());
        assert_eq!(c.eval(&[3.0]), 9.0);
    }

    fn echo_batch(m: usize) -> SimulationBatch {
        let thetas = Matrix::from_fn(m, 1, |i, _| (i as f64 * 0.37).sin());
        SimulationBatch {
            stats: thetas.clone(),
            thetas,
            seed: 0,
            model: "echo".into(),
            prior_hash: String::new(),
        }
    }

    #[test]
    fn noiseless_projector_is_identity() {
        let batch = echo_batch(50);
        let p = construct_projector(&batch, &[TargetFunctional::coordinate(0)], &BasisSpec::identity(), 0.0).unwrap();
        assert!(p.intercept[0].abs() < 1e-12);
        assert!((p.coefficients[(0, 0)] - 1.0).abs() < 1e-12);
        assert!(p.diagnostics.residual_mss[0] < 1e-20);
        assert_eq!(p.output_dim(), 1);
    }

    #[test]
    fn duplicated_targets_give_identical_outputs() {
        let batch = echo_batch(40);
        let t = [TargetFunctional::coordinate(0), TargetFunctional::coordinate(0)];
        let p = construct_projector(&batch, &t, &BasisSpec::identity(), 0.0).unwrap();
        let out = project(&p, &[0.3]).unwrap();
        assert!((out[0] - out[1]).abs() < 1e-8);
    }

    #[test]
    fn projection_examples() {
        let mut p = construct_projector(&echo_batch(20), &[TargetFunctional::coordinate(0)], &BasisSpec::identity(), 0.0)
            .unwrap();
        p.input_dim = 2;
        p.intercept = vec![0.0];
        p.coefficients = Matrix::from_rows(&[vec![0.5, 0.5]]).unwrap();
        assert_eq!(project(&p, &[2.0, 4.0]).unwrap(), vec![3.0]);
        p.coefficients = Matrix::zeros(1, 2);
        p.intercept = vec![1.25];
        assert_eq!(project(&p, &[9.0, -4.0]).unwrap(), vec![1.25]);
        assert!(project(&p, &[1.0]).is_err());
    }

    #[test]
    fn fitted_projection_mean_matches_target_mean() {
        let fixture = ModelFixture::gaussian_location(0.0, 1.0, 1.0, 4, 1.0, 3).unwrap();
        let batch = abc::simulate_batch(&fixture.prior, &fixture, 2_000, 5).unwrap();
        let targets = [TargetFunctional::coordinate(0)];
        let p = construct_projector(&batch, &targets, &BasisSpec::identity(), 0.0).unwrap();
        let proj = p.project_matrix(&batch.stats).unwrap();
        let a: f64 = proj.col(0).iter().sum::<f64>() / 2_000.0;
        let b: f64 = batch.thetas.col(0).iter().sum::<f64>() / 2_000.0;
        assert!((a - b).abs() < 1e-10);
        assert_eq!(fixture.stat_dim(), 5);
    }

    fn small_config(seed: u64) -> RunConfig {
        let mut cfg = RunConfig::new(FixtureSpec::gaussian_location(0.0, 1.0, 1.0, 4, 1.0, 0), seed);
        cfg.pilot.m = 4_000;
        cfg.construct.m = 4_000;
        cfg.main.m = 20_000;
        cfg.main.accept_fraction = 0.02;
        cfg
    }

    #[test]
    fn gaussian_pipeline_recovers_conjugate_mean() {
        let cfg = small_config(11);
        let run = run_semiauto(&cfg).unwrap();
        let est = &run.infer.estimates[0];
        assert_eq!(est.oracle, Some(0.8));
        let post = &run.infer.posterior;
        let sd = post.sd_of(|t| t[0]) / (post.len() as f64).sqrt();
        assert!((est.estimate - 0.8).abs() < 3.0 * sd + 0.02, "{est:?} sd {sd}");
        assert_eq!(run.construct.projector.output_dim(), 1);
    }

    #[test]
    fn degenerate_pilot_still_completes() {
        let mut cfg = small_config(3);
        cfg.pilot.accept_fraction = 1.0;
        cfg.pilot.expand = 0.0;
        let fixture = ModelFixture::build(&cfg.model).unwrap();
        let pipe = Pipeline::new(&cfg, &fixture).unwrap();
        let batch = pipe.simulate_pilot().unwrap();
        let pilot = pipe.pilot(&batch).unwrap();
        let col = batch.thetas.col(0);
        let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(pilot.region.bounds[0], [lo, hi]);
        assert!(pipe.run().is_ok());
    }

    #[test]
    fn pipeline_is_deterministic() {
        let cfg = small_config(21);
        let a = run_semiauto(&cfg).unwrap();
        let b = run_semiauto(&cfg).unwrap();
        assert_eq!(a.infer.posterior, b.infer.posterior);
        assert_eq!(a.construct.projector, b.construct.projector);
    }

    #[test]
    fn projected_pilot_mode_runs() {
        let mut cfg = small_config(4);
        cfg.pilot.statistics = PilotStatistics::Projected;
        let run = run_semiauto(&cfg).unwrap();
        assert!(run.pilot.posterior.provenance.projector_id.is_some());
    }

    #[test]
    fn stage_errors_are_tagged() {
        let mut cfg = small_config(4);
        cfg.targets = Some(vec![TargetFunctional::coordinate(0)]);
        let fixture = ModelFixture::build(&cfg.model).unwrap();
        cfg.construct.m = 2;
        let pipe = Pipeline::new(&cfg, &fixture).unwrap();
        let region = TruncationRegion { bounds: vec![[-1.0, 1.0]] };
        let err = pipe.construct(&region).unwrap_err();
        assert!(err.to_string().contains("construct"), "{err}");
    }
}
