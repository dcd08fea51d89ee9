//! Experiment drivers: SNR conventions, seeded sweeps and CSV output.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beamforming::{backscatter_energy, dli_metric, BeamformerSolution, BfOptions, Problem};
use crate::detection::{pe_mismatch, pe_perfect, simulate_ber, AdcModel, BerSetup, Estimated, Signaling};
use crate::error::{invalid, Error, Result};
use crate::estimation::{apply_estimates, estimate_scene, joint_sign_errors, observe_pilots, scene_pilots, EstimationConfig};
use crate::linalg::{c, db_to_pow, pow_db, CVec};
use crate::partitioning::{dp_partition, run_ap_selection, Evaluation, GameConfig, Partition, UtilityContext};
use crate::quantization::NoiseCovariance;
use crate::scene::{antenna_positions, channel_coefficient, path_gain, pg_map, GridSpec, Point3, Scene, SceneChannels};

/// Mean power gain `beta` between one AP antenna and the BDE, dB.
pub const BETA_BAR_DB: f64 = -53.4;

/// Scale factor of the integer weights in the DP partition.
pub const DP_SCALE: f64 = 1e8;

/// Quantizer loading factor of the simulated ADCs.
pub const ADC_LOADING: f64 = 3.0;

/// Transmit energy for a received SNR of `P beta^2`, the backscatter link
/// crossing two AP-to-BDE hops.
pub fn p_from_snr_db(snr_db: f64) -> f64 {
    db_to_pow(snr_db - 2.0 * BETA_BAR_DB)
}

/// Pilot energy for a pilot SNR, defined like the data SNR.
pub fn p_from_snr_p_db(snr_p_db: f64) -> f64 {
    p_from_snr_db(snr_p_db)
}

/// Seed of substream `index`, independent of evaluation order.
pub fn substream_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn substream(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(substream_seed(seed, index))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    PeSweep,
    PgMap,
    NmseSweep,
    TableSummary,
    MultiBde,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Csi {
    #[default]
    Perfect,
    Estimated,
}

impl fmt::Display for Csi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Csi::Perfect => "perfect",
            Csi::Estimated => "estimated",
        })
    }
}

impl FromStr for Csi {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "perfect" => Ok(Csi::Perfect),
            "estimated" => Ok(Csi::Estimated),
            _ => Err(Error::InvalidInput(format!("unknown CSI mode '{s}'"))),
        }
    }
}

/// Inclusive SNR grid in dB.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnrRange {
    pub start_db: f64,
    pub stop_db: f64,
    pub step_db: f64,
}

impl SnrRange {
    pub fn points(&self) -> Result<Vec<f64>> {
        if !(self.step_db > 0.0) || !(self.stop_db >= self.start_db) {
            return Err(Error::Config(format!("empty SNR range {self}")));
        }
        let n = ((self.stop_db - self.start_db) / self.step_db + 1e-9).floor() as usize;
        Ok((0..=n).map(|i| self.start_db + i as f64 * self.step_db).collect())
    }
}

impl fmt::Display for SnrRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.start_db, self.stop_db, self.step_db)
    }
}

/// `start:stop:step`, or a single value.
impl FromStr for SnrRange {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let v: std::result::Result<Vec<f64>, _> = s.split(':').map(|p| p.trim().parse::<f64>()).collect();
        let v = v.map_err(|e| Error::InvalidInput(format!("bad SNR range '{s}': {e}")))?;
        let r = match v[..] {
            [a] => SnrRange { start_db: a, stop_db: a, step_db: 1.0 },
            [a, b, step] => SnrRange { start_db: a, stop_db: b, step_db: step },
            _ => return Err(Error::InvalidInput(format!("SNR range '{s}' must be start:stop:step"))),
        };
        r.points()?;
        Ok(r)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    /// Scene file; the reference room when absent. Relative paths resolve
    /// against the directory of the experiment file.
    pub scene: Option<PathBuf>,
    /// Reference AP array size `[rows, cols]` overriding the scene file.
    pub ref_array: Option<[usize; 2]>,
    pub problems: Vec<Problem>,
    pub bits: Vec<u32>,
    pub snr_db: SnrRange,
    /// Received SNR at which beamformers are designed before scaling.
    pub design_snr_db: f64,
    pub snr_p_db: Vec<f64>,
    /// Pilot SNR of the estimated-CSI error-rate sweeps.
    pub pilot_snr_db: f64,
    pub csi: Csi,
    pub trials: u64,
    pub seed: u64,
    pub alpha_db: f64,
    pub jprime: usize,
    pub slots: usize,
    /// Draw a fresh BDE position per trial in the estimation sweeps.
    pub random_bde: bool,
    pub grid: [usize; 2],
    pub grid_z_m: f64,
    pub estimation: EstimationConfig,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::PeSweep,
            scene: None,
            ref_array: None,
            problems: vec![Problem::Bf, Problem::Alpha0],
            bits: vec![16],
            snr_db: SnrRange { start_db: -30.0, stop_db: 0.0, step_db: 2.0 },
            design_snr_db: -25.0,
            snr_p_db: vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0],
            pilot_snr_db: 6.0,
            csi: Csi::Perfect,
            trials: 10_000,
            seed: 1,
            alpha_db: 0.0,
            jprime: 1,
            slots: 1,
            random_bde: false,
            grid: [80, 40],
            grid_z_m: 2.0,
            estimation: EstimationConfig::default(),
            output: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        if let (Some(s), Some(dir)) = (&cfg.scene, path.parent()) {
            if s.is_relative() {
                cfg.scene = Some(dir.join(s));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        self.snr_db.points()?;
        if self.trials == 0 {
            return fail("trials must be at least one");
        }
        if self.problems.is_empty() {
            return fail("at least one problem required");
        }
        if self.bits.is_empty() || self.bits.iter().any(|b| *b == 0 || *b > 32) {
            return fail("bits must be a non-empty list of values in 1..=32");
        }
        if self.snr_p_db.is_empty() {
            return fail("at least one pilot SNR required");
        }
        if self.jprime == 0 || self.slots == 0 {
            return fail("jprime and slots must be at least one");
        }
        if self.grid.iter().any(|n| *n == 0) {
            return fail("grid must have at least one cell per axis");
        }
        if let Some([r, c]) = self.ref_array {
            if r == 0 || c == 0 {
                return fail("reference array must have at least one antenna");
            }
        }
        self.estimation.validate()
    }

    pub fn load_scene(&self) -> Result<Scene> {
        let scene = match &self.scene {
            Some(p) => Scene::from_path(p)?,
            None => Scene::reference(16),
        };
        Ok(match self.ref_array {
            Some([r, c]) => scene.with_ref_array(r, c),
            None => scene,
        })
    }

    pub fn alpha(&self) -> f64 {
        db_to_pow(self.alpha_db)
    }
}

/// A designed beamformer with the partition it was designed for.
#[derive(Clone, Debug)]
pub struct Design {
    pub problem: Problem,
    pub partition: Partition,
    pub solution: BeamformerSolution,
    pub u: f64,
    pub c: f64,
    pub feasible: bool,
}

impl Design {
    fn from_eval(problem: Problem, e: Evaluation) -> Result<Self> {
        let solution = e
            .solution
            .ok_or_else(|| Error::Infeasible(format!("{problem}: {}", e.error.unwrap_or_default())))?;
        Ok(Self { problem, partition: e.partition, solution, u: e.u, c: e.c, feasible: e.feasible })
    }
}

/// Role selection and beamformer design for every problem. The benchmark
/// uses the DP split; the others run the switch and swap game, seeded from
/// the matching nullspace design where the inner solver is iterative.
pub struct Designer<'a> {
    pub channels: &'a SceneChannels,
    pub opts: BfOptions,
    pub seed: u64,
    cache: HashMap<Problem, Design>,
}

impl<'a> Designer<'a> {
    pub fn new(channels: &'a SceneChannels, opts: BfOptions, seed: u64) -> Self {
        Self { channels, opts, seed, cache: HashMap::new() }
    }

    fn game(problem: Problem, seed: u64) -> GameConfig {
        match problem {
            Problem::Dli | Problem::DliPrime | Problem::Alpha0Prime | Problem::D | Problem::DPrime => GameConfig::single_pass(seed),
            _ => GameConfig { seed, ..Default::default() },
        }
    }

    fn seed_problem(problem: Problem) -> Option<Problem> {
        match problem {
            Problem::Dli | Problem::D => Some(Problem::Alpha0),
            Problem::DliPrime | Problem::Alpha0Prime | Problem::DPrime => Some(Problem::Alpha0PrimeClosed),
            _ => None,
        }
    }

    pub fn design(&mut self, problem: Problem) -> Result<Design> {
        if let Some(d) = self.cache.get(&problem) {
            return Ok(d.clone());
        }
        let ctx = UtilityContext::new(self.channels, problem, self.opts);
        let eval = if problem == Problem::Bf {
            let p = dp_partition(&self.channels.link_gains(0)?, DP_SCALE, self.channels.ref_id())?;
            ctx.evaluate(&p)
        } else {
            let init = match Self::seed_problem(problem) {
                Some(s) => Some(self.design(s)?.partition),
                None => None,
            };
            run_ap_selection(&ctx, &Self::game(problem, self.seed), init.as_ref())?.best
        };
        let d = Design::from_eval(problem, eval)?;
        self.cache.insert(problem, d.clone());
        Ok(d)
    }
}

/// Seeded nullspace AP selection, the partition used when none is given.
pub fn default_partition(chans: &SceneChannels, seed: u64) -> Result<Partition> {
    let ctx = UtilityContext::new(chans, Problem::Alpha0, BfOptions::new(1.0));
    let sel = run_ap_selection(&ctx, &GameConfig { seed, ..Default::default() }, None)?;
    Ok(sel.best.partition)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeRow {
    pub snr_db: f64,
    pub problem: String,
    pub bits: u32,
    pub csi: String,
    pub pe_closed: f64,
    pub pe_sim: f64,
    pub trials: u64,
}

/// Error probability versus SNR, closed form and simulated. Beamformers
/// are designed once at the design SNR and rescaled to every point.
pub fn pe_sweep(cfg: &ExperimentConfig) -> Result<Vec<PeRow>> {
    cfg.validate()?;
    if cfg.problems.contains(&Problem::Multi) {
        return Err(Error::Config("the multi-device problem has no single-link error rate".into()));
    }
    let truth = SceneChannels::synthesize(&cfg.load_scene()?)?;
    let sig = Signaling::antipodal(cfg.slots)?;
    let p_design = p_from_snr_db(cfg.design_snr_db);
    let assumed = match cfg.csi {
        Csi::Perfect => truth.clone(),
        Csi::Estimated => {
            let spec = scene_pilots(&truth, p_from_snr_p_db(cfg.pilot_snr_db), cfg.jprime)?;
            let obs = observe_pilots(&truth, &spec, Some(&mut substream(cfg.seed, u64::MAX)))?;
            apply_estimates(&truth, &estimate_scene(&spec, &obs, truth.ref_id(), &cfg.estimation)?, false)?
        }
    };
    let snrs = cfg.snr_db.points()?;
    let mut rows = Vec::new();
    let mut stream = 0u64;
    for &bits in &cfg.bits {
        let truth_b = truth.with_adc_bits(bits);
        let assumed_b = assumed.with_adc_bits(bits);
        let opts = BfOptions::new(p_design).with_alpha(cfg.alpha());
        let mut designer = Designer::new(&assumed_b, opts, cfg.seed);
        for &problem in &cfg.problems {
            let d = designer.design(problem)?;
            let tch = truth_b.for_partition(&d.partition, 0)?;
            let ach = assumed_b.for_partition(&d.partition, 0)?;
            for &snr in &snrs {
                let x = d.solution.x.scale((p_from_snr_db(snr) / p_design).sqrt());
                let d_true = NoiseCovariance::for_beamformer(&tch, &x, sig.delta());
                let pe_closed = match cfg.csi {
                    Csi::Perfect => pe_perfect(&x, &tch.h_bl(), &d_true, &sig),
                    Csi::Estimated => {
                        let d_hat = NoiseCovariance::for_beamformer(&ach, &x, sig.delta());
                        let h_bl_hat = ach.h_bl();
                        let est = Estimated { h_dl: &ach.h_dl, h_bl: &h_bl_hat, d: &d_hat, sigma2_dl: 0.0 };
                        pe_mismatch(&x, &tch.h_bl(), &d_true, &est, &sig)?
                    }
                };
                let setup = BerSetup {
                    truth: &tch,
                    estimate: (cfg.csi == Csi::Estimated).then_some(&ach),
                    x: &x,
                    signaling: &sig,
                    adc: AdcModel::MidRise { loading: ADC_LOADING },
                    noise_scale: 1.0,
                };
                let ber = simulate_ber(&setup, cfg.trials, substream_seed(cfg.seed, stream))?;
                stream += 1;
                rows.push(PeRow {
                    snr_db: snr,
                    problem: problem.to_string(),
                    bits,
                    csi: cfg.csi.to_string(),
                    pe_closed,
                    pe_sim: ber.rate(),
                    trials: ber.trials,
                });
            }
        }
    }
    Ok(rows)
}

/// Mean estimation errors of one AP at one pilot SNR, linear.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NmseRow {
    pub snr_p_db: f64,
    pub ap_id: u32,
    pub nmse_iter: f64,
    pub nmse_noiter: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NmseLongRow {
    pub snr_p_db: f64,
    pub ap_id: u32,
    pub variant: String,
    pub nmse_db: f64,
}

/// Uniform BDE position over the floor plan below 2 m.
pub fn random_bde_position<R: Rng + ?Sized>(scene: &Scene, rng: &mut R) -> Point3 {
    let [dx, dy, dz] = scene.room.dims;
    Point3::new(rng.random_range(0.0..dx), rng.random_range(0.0..dy), rng.random_range(0.0..dz.min(2.0)))
}

/// Channel estimation error with and without the refinement loop, averaged
/// over trials. Errors are measured up to the common sign of all links.
pub fn nmse_sweep(cfg: &ExperimentConfig) -> Result<Vec<NmseRow>> {
    cfg.validate()?;
    let scene = cfg.load_scene()?;
    let base = SceneChannels::synthesize(&scene.with_bdes(&[scene.bdes[0].position]))?;
    let ids = base.ap_ids();
    let ref_id = base.ref_id();
    let mut rows = Vec::new();
    for (si, &snr_p) in cfg.snr_p_db.iter().enumerate() {
        let p = p_from_snr_p_db(snr_p);
        let per_trial: Result<Vec<(Vec<f64>, Vec<f64>)>> = (0..cfg.trials)
            .into_par_iter()
            .map(|t| {
                let mut rng = substream(cfg.seed, si as u64 * cfg.trials + t);
                let chans = if cfg.random_bde {
                    SceneChannels::synthesize(&scene.with_bdes(&[random_bde_position(&scene, &mut rng)]))?
                } else {
                    base.clone()
                };
                let spec = scene_pilots(&chans, p, cfg.jprime)?;
                let obs = observe_pilots(&chans, &spec, Some(&mut rng))?;
                let res = estimate_scene(&spec, &obs, ref_id, &cfg.estimation)?.swap_remove(0);
                let truth: Vec<&CVec> = ids.iter().map(|id| chans.link(0, *id)).collect::<Result<_>>()?;
                let fin = res.links(ref_id);
                let ini = res.initial_links(ref_id);
                let fin: Vec<&CVec> = fin.iter().map(|(_, v)| v).collect();
                let ini: Vec<&CVec> = ini.iter().map(|(_, v)| v).collect();
                Ok((joint_sign_errors(&truth, &fin)?, joint_sign_errors(&truth, &ini)?))
            })
            .collect();
        let per_trial = per_trial?;
        for (i, id) in ids.iter().enumerate() {
            let n = per_trial.len() as f64;
            rows.push(NmseRow {
                snr_p_db: snr_p,
                ap_id: id.0,
                nmse_iter: per_trial.iter().map(|t| t.0[i]).sum::<f64>() / n,
                nmse_noiter: per_trial.iter().map(|t| t.1[i]).sum::<f64>() / n,
            });
        }
    }
    Ok(rows)
}

pub fn nmse_long(rows: &[NmseRow]) -> Vec<NmseLongRow> {
    rows.iter()
        .flat_map(|r| {
            [("iter", r.nmse_iter), ("noiter", r.nmse_noiter)].map(|(variant, v)| NmseLongRow {
                snr_p_db: r.snr_p_db,
                ap_id: r.ap_id,
                variant: variant.to_string(),
                nmse_db: pow_db(v),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub problem: String,
    pub pg_at_bd_db: f64,
    pub objective_db: f64,
    pub c_s_db: f64,
}

/// Path gain at the BDE, `||H_BL x||^2` (smallest over BDEs for the
/// multi-device problem) and `C(S)` for every problem at `P = p_max`.
pub fn table_summary(cfg: &ExperimentConfig) -> Result<Vec<TableRow>> {
    cfg.validate()?;
    let scene = cfg.load_scene()?;
    let chans = SceneChannels::synthesize(&scene)?;
    let mut designer = Designer::new(&chans, BfOptions::new(scene.p_max).with_alpha(cfg.alpha()), cfg.seed);
    let mut rows = Vec::new();
    for &problem in &cfg.problems {
        let d = designer.design(problem)?;
        rows.push(summarize(&chans, &d)?);
    }
    Ok(rows)
}

pub fn summarize(chans: &SceneChannels, d: &Design) -> Result<TableRow> {
    let chs = chans.for_partition_all(&d.partition)?;
    let x = &d.solution.x;
    let objective = chs.iter().map(|ch| backscatter_energy(ch, x)).fold(f64::INFINITY, f64::min);
    let c_s = chs.iter().map(|ch| dli_metric(ch, x)).fold(0.0, f64::max);
    Ok(TableRow {
        problem: d.problem.to_string(),
        pg_at_bd_db: pow_db(path_gain(x, &chs[0].h_c)?),
        objective_db: pow_db(objective),
        c_s_db: pow_db(c_s),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PgRow {
    pub x_m: f64,
    pub y_m: f64,
    pub pg_db: f64,
}

/// Path-gain map of the first configured problem's beamformer.
pub fn pg_map_experiment(cfg: &ExperimentConfig) -> Result<Vec<PgRow>> {
    cfg.validate()?;
    let scene = cfg.load_scene()?;
    let chans = SceneChannels::synthesize(&scene)?;
    let d = Designer::new(&chans, BfOptions::new(scene.p_max).with_alpha(cfg.alpha()), cfg.seed).design(cfg.problems[0])?;
    let grid = GridSpec::covering(&scene.room, cfg.grid[0], cfg.grid[1], cfg.grid_z_m);
    Ok(pg_map(&scene, &d.partition, &d.solution.x, &grid)?
        .into_iter()
        .map(|s| PgRow { x_m: s.x, y_m: s.y, pg_db: s.pg_db() })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiRow {
    pub scenario: u32,
    pub bde: usize,
    pub sinr_db: f64,
    pub gain_db: f64,
    pub c_s_db: f64,
}

/// Max-min SINR design for all scene BDEs at the first SNR point, without
/// (scenario 1) and with (scenario 2) the interference terms.
pub fn multi_bde(cfg: &ExperimentConfig) -> Result<Vec<MultiRow>> {
    cfg.validate()?;
    let scene = cfg.load_scene()?;
    let chans = SceneChannels::synthesize(&scene)?;
    let p = p_from_snr_db(cfg.snr_db.start_db);
    let mut rows = Vec::new();
    for (scenario, interference) in [(1, false), (2, true)] {
        let mut opts = BfOptions::new(p);
        opts.multi_interference = interference;
        let d = Designer::new(&chans, opts, cfg.seed).design(Problem::Multi)?;
        let chs = chans.for_partition_all(&d.partition)?;
        let x = &d.solution.x;
        let c_s = chs.iter().map(|ch| dli_metric(ch, x)).fold(0.0, f64::max);
        for (k, ch) in chs.iter().enumerate() {
            rows.push(MultiRow {
                scenario,
                bde: k + 1,
                sinr_db: pow_db(d.solution.sinr[k]),
                gain_db: pow_db(backscatter_energy(ch, x) / x.norm_squared()),
                c_s_db: pow_db(c_s),
            });
        }
    }
    Ok(rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Mean per-antenna power gain `beta`.
    pub beta_bar: f64,
    pub beta_bar_db: f64,
    /// Mean per-antenna amplitude gain.
    pub mean_amplitude: f64,
    /// Standard error of `beta_bar` across trials.
    pub std_error: f64,
    pub trials: usize,
}

/// Mean amplitude and mean power gain between every AP antenna and
/// `position`.
pub fn mean_gains(scene: &Scene, position: &Point3) -> Result<(f64, f64)> {
    let (mut amp, mut pow) = (0.0, 0.0);
    let mut n = 0usize;
    for ap in &scene.aps {
        for a in antenna_positions(ap, scene.wavelength) {
            let h = channel_coefficient(&scene.room, scene.wavelength, &a, position)?;
            amp += h.norm();
            pow += h.norm_sqr();
            n += 1;
        }
    }
    Ok((amp / n as f64, pow / n as f64))
}

/// Monte-Carlo estimate of the average per-antenna path loss over uniform
/// BDE positions.
pub fn snr_calibration(scene: &Scene, trials: usize, seed: u64) -> Result<Calibration> {
    if trials < 100 {
        return invalid("calibration needs at least 100 trials");
    }
    scene.validate()?;
    let samples: Result<Vec<(f64, f64)>> = (0..trials as u64)
        .into_par_iter()
        .map(|t| mean_gains(scene, &random_bde_position(scene, &mut substream(seed, t))))
        .collect();
    let samples = samples?;
    let n = trials as f64;
    let amp = samples.iter().map(|s| s.0).sum::<f64>() / n;
    let mean = samples.iter().map(|s| s.1).sum::<f64>() / n;
    let var = samples.iter().map(|s| (s.1 - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(Calibration { beta_bar: mean, beta_bar_db: pow_db(mean), mean_amplitude: amp, std_error: (var / n).sqrt(), trials })
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Writes rows with a header taken from the field names.
pub fn write_csv<T: Serialize, W: Write>(rows: &[T], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: for<'de> Deserialize<'de>, R: Read>(input: R) -> Result<Vec<T>> {
    csv::Reader::from_reader(input).deserialize().map(|r| r.map_err(csv_err)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
struct ComplexRow {
    re: f64,
    im: f64,
}

/// Beamformer as `re,im` rows.
pub fn write_vector<W: Write>(x: &CVec, out: W) -> Result<()> {
    write_csv(&x.iter().map(|v| ComplexRow { re: v.re, im: v.im }).collect::<Vec<_>>(), out)
}

pub fn read_vector<R: Read>(input: R) -> Result<CVec> {
    let rows: Vec<ComplexRow> = read_csv(input)?;
    Ok(CVec::from_iterator(rows.len(), rows.iter().map(|r| c(r.re, r.im))))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionRow {
    pub objective_db: f64,
    pub c_s_db: f64,
    pub power: f64,
    pub feasible: bool,
}

/// Partition as JSON `{"ce": [...], "readers": [...]}`.
pub fn write_partition<W: Write>(p: &Partition, out: W) -> Result<()> {
    serde_json::to_writer_pretty(out, p).map_err(|e| Error::Io(std::io::Error::other(e)))
}

pub fn read_partition<R: Read>(input: R, ref_id: crate::scene::ApId) -> Result<Partition> {
    let p: Partition = serde_json::from_reader(input).map_err(|e| Error::Config(format!("bad partition file: {e}")))?;
    p.with_ref(ref_id)
}

/// Runs the configured experiment and writes its CSV.
pub fn run_experiment<W: Write>(cfg: &ExperimentConfig, out: W) -> Result<()> {
    match cfg.kind {
        ExperimentKind::PeSweep => write_csv(&pe_sweep(cfg)?, out),
        ExperimentKind::NmseSweep => write_csv(&nmse_long(&nmse_sweep(cfg)?), out),
        ExperimentKind::TableSummary => write_csv(&table_summary(cfg)?, out),
        ExperimentKind::PgMap => write_csv(&pg_map_experiment(cfg)?, out),
        ExperimentKind::MultiBde => write_csv(&multi_bde(cfg)?, out),
    }
}
