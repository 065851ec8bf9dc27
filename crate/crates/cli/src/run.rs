//! Single experiments: synthesis, reconstruction and artifact output.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use hsphr::io::{read_images, write_cube, write_images, write_pgm};
use hsphr::scenario::Scenario;
use hsphr::solver::{noise_model_for, run, SolverOutput};
use hsphr::{ComplexCube, NoiseLevel, NoiseModel, SolverConfig};

use crate::config::ExperimentConfig;
use crate::kv::KvDoc;

pub const MANIFEST: &str = "manifest.txt";
pub const TRACE: &str = "trace.csv";
pub const RECONSTRUCTION: &str = "reconstruction.hsc1";
pub const OBSERVATIONS: &str = "observations.hsr1";
pub const TRUTH: &str = "truth.hsc1";

/// Output directory that removes what it wrote unless committed.
pub struct OutputDir {
    dir: PathBuf,
    created: bool,
    files: Vec<PathBuf>,
    committed: bool,
}

impl OutputDir {
    /// Refuses a directory holding a previous manifest unless `force`.
    pub fn prepare(dir: &Path, force: bool) -> Result<Self> {
        if dir.join(MANIFEST).exists() && !force {
            bail!(
                "{} already contains a {MANIFEST}; pass --force to overwrite",
                dir.display()
            );
        }
        let created = !dir.exists();
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            created,
            files: Vec::new(),
            committed: false,
        })
    }

    pub fn file(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.files.push(p.clone());
        p
    }

    pub fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for OutputDir {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for f in &self.files {
            let _ = fs::remove_file(f);
        }
        if self.created {
            let _ = fs::remove_dir(&self.dir);
        }
    }
}

/// Solver settings with the likelihood that matches the observations.
pub fn solver_config(cfg: &ExperimentConfig, noise: NoiseModel) -> SolverConfig {
    SolverConfig {
        noise,
        ..cfg.solver.clone()
    }
}

/// Synthesizes the scenario and reconstructs it, tracking the error
/// against the known object.
pub fn execute(cfg: &ExperimentConfig) -> Result<(Scenario, SolverConfig, SolverOutput)> {
    cfg.validate()?;
    let scenario = Scenario::build(cfg.scenario.clone())?;
    let solver_cfg = solver_config(cfg, scenario.noise_model()?);
    let out = run(
        &solver_cfg,
        &scenario.operator,
        &scenario.observations.images,
        Some(scenario.truth_ref()),
    )?;
    Ok((scenario, solver_cfg, out))
}

pub fn run_single(cfg: &ExperimentConfig, force: bool) -> Result<SolverOutput> {
    cfg.validate()?;
    let mut out_dir = OutputDir::prepare(&cfg.out, force)?;
    let (scenario, solver_cfg, out) = execute(cfg)?;
    write_reconstruction(&mut out_dir, cfg, &scenario, scenario.observations.level, &solver_cfg, &out, "run")?;
    out_dir.commit();
    Ok(out)
}

/// Writes observations, the true object and a manifest.
pub fn simulate(cfg: &ExperimentConfig, force: bool) -> Result<Scenario> {
    cfg.validate()?;
    let mut out_dir = OutputDir::prepare(&cfg.out, force)?;
    let scenario = Scenario::build(cfg.scenario.clone())?;
    write_images(out_dir.file(OBSERVATIONS), &scenario.observations.images)?;
    write_cube(out_dir.file(TRUTH), scenario.truth())?;
    let mut doc = cfg.to_doc();
    record_run(&mut doc, "simulate");
    record_calibration(&mut doc, scenario.observations.level, None);
    fs::write(out_dir.file(MANIFEST), doc.render())?;
    out_dir.commit();
    Ok(scenario)
}

/// Runs the solver on observations written by [`simulate`]. The masks and
/// the reference object are regenerated from the input manifest.
pub fn reconstruct(input: &Path, cfg: &ExperimentConfig, force: bool) -> Result<SolverOutput> {
    cfg.validate()?;
    let manifest = fs::read_to_string(input.join(MANIFEST))
        .with_context(|| format!("reading {}", input.join(MANIFEST).display()))?;
    let doc = KvDoc::parse(&manifest)?;
    let level = read_calibration(&doc).context("input manifest has no usable [calibration]")?;
    let images = read_images(input.join(OBSERVATIONS))?;

    let mut out_dir = OutputDir::prepare(&cfg.out, force)?;
    let scenario = Scenario::build(cfg.scenario.clone())?;
    if images.len() != scenario.operator.experiments()
        || images.iter().any(|im| im.height() != scenario.grid.height() || im.width() != scenario.grid.width())
    {
        bail!("observations in {} do not match the configured grid", input.display());
    }
    let solver_cfg = solver_config(cfg, noise_model_for(level, &images)?);
    let out = run(&solver_cfg, &scenario.operator, &images, Some(scenario.truth_ref()))?;
    write_reconstruction(&mut out_dir, cfg, &scenario, level, &solver_cfg, &out, "reconstruct")?;
    out_dir.commit();
    Ok(out)
}

fn record_run(doc: &mut KvDoc, command: &str) {
    doc.set("run", "command", command);
    doc.set("run", "version", env!("CARGO_PKG_VERSION"));
}

fn record_calibration(doc: &mut KvDoc, level: NoiseLevel, model: Option<NoiseModel>) {
    match level {
        NoiseLevel::None => doc.set("calibration", "level", "none"),
        NoiseLevel::Gaussian { sigma } => {
            doc.set("calibration", "level", "gaussian");
            doc.set("calibration", "sigma", sigma);
        }
        NoiseLevel::Poisson { chi } => {
            doc.set("calibration", "level", "poisson");
            doc.set("calibration", "chi", chi);
        }
    }
    doc.set("calibration", "snr_definition", level.snr_definition());
    match model {
        Some(NoiseModel::Gaussian { sigma }) => doc.set("calibration", "likelihood", format!("gaussian sigma={sigma}")),
        Some(NoiseModel::Poisson { chi }) => doc.set("calibration", "likelihood", format!("poisson chi={chi}")),
        None => {}
    }
}

fn read_calibration(doc: &KvDoc) -> Result<NoiseLevel> {
    let num = |key: &str| -> Result<f64> {
        doc.get("calibration", key)
            .with_context(|| format!("missing {key}"))?
            .parse()
            .with_context(|| format!("bad {key}"))
    };
    Ok(match doc.get("calibration", "level") {
        Some("none") => NoiseLevel::None,
        Some("gaussian") => NoiseLevel::Gaussian { sigma: num("sigma")? },
        Some("poisson") => NoiseLevel::Poisson { chi: num("chi")? },
        other => bail!("unknown calibration level {other:?}"),
    })
}

fn write_reconstruction(
    out_dir: &mut OutputDir,
    cfg: &ExperimentConfig,
    scenario: &Scenario,
    level: NoiseLevel,
    solver_cfg: &SolverConfig,
    out: &SolverOutput,
    command: &str,
) -> Result<()> {
    write_cube(out_dir.file(RECONSTRUCTION), &out.estimate)?;
    if let Some(trace) = &out.trace {
        let mut w = csv::Writer::from_path(out_dir.file(TRACE))?;
        w.write_record(["iteration", "channel", "error", "mean"])?;
        for s in 0..trace.len() {
            let mean = trace.mean_at(s).to_string();
            for (k, e) in trace.channels_at(s).iter().enumerate() {
                w.write_record([(s + 1).to_string(), k.to_string(), e.to_string(), mean.clone()])?;
            }
        }
        w.flush()?;
    }
    let amp_max = write_images_per_channel(out_dir, &out.estimate)?;

    let mut doc = cfg.to_doc();
    record_run(&mut doc, command);
    doc.set("run", "config_digest", format!("{:016x}", solver_cfg.digest()));
    doc.set("run", "gamma0", out.gamma0);
    doc.set("run", "filter", solver_cfg.filter.build()?.describe());
    if let Some(e) = out.trace.as_ref().and_then(|t| t.final_mean()) {
        doc.set("run", "final_mean_error", e);
    }
    doc.set("run", "warnings", out.warnings.len());
    for (i, w) in out.warnings.iter().enumerate() {
        doc.set("run", &format!("warning_{}", i + 1), w);
    }
    record_calibration(&mut doc, level, Some(solver_cfg.noise));
    let wl: Vec<String> = scenario.grid.wavelengths().iter().map(f64::to_string).collect();
    doc.set("artifacts", "wavelengths", wl.join(", "));
    doc.set("artifacts", "amplitude_pgm_range", format!("0, {amp_max}"));
    doc.set("artifacts", "phase_pgm_range", "-pi, pi");
    fs::write(out_dir.file(MANIFEST), doc.render())?;
    for w in &out.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

/// Amplitude maps share one linear range `[0, max]` across channels; phase
/// maps use `[−π, π]`. Returns the amplitude maximum.
fn write_images_per_channel(out_dir: &mut OutputDir, cube: &ComplexCube) -> Result<f64> {
    let amps: Vec<_> = (0..cube.channels()).map(|k| cube.amplitude(k)).collect();
    let amp_max = amps.iter().map(|a| a.max()).fold(0.0, f64::max);
    for (k, amp) in amps.iter().enumerate() {
        write_pgm(out_dir.file(&format!("amplitude_k{k}.pgm")), amp, 0.0, amp_max)?;
        let phase = cube.phase(k);
        write_pgm(
            out_dir.file(&format!("phase_k{k}.pgm")),
            &phase,
            -std::f64::consts::PI,
            std::f64::consts::PI,
        )?;
    }
    Ok(amp_max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uncommitted_output_is_removed() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("run");
        {
            let mut out = OutputDir::prepare(&dir, false).unwrap();
            fs::write(out.file("a.txt"), "x").unwrap();
        }
        assert!(!dir.exists());
    }

    #[test]
    fn committed_output_stays_and_blocks_reuse() {
        let tmp = tempfile::tempdir().unwrap();
        let mut out = OutputDir::prepare(tmp.path(), false).unwrap();
        fs::write(out.file(MANIFEST), "[run]\n").unwrap();
        out.commit();
        assert!(tmp.path().join(MANIFEST).exists());
        assert!(OutputDir::prepare(tmp.path(), false).is_err());
        assert!(OutputDir::prepare(tmp.path(), true).is_ok());
    }

    #[test]
    fn calibration_round_trips() {
        for level in [
            NoiseLevel::None,
            NoiseLevel::Gaussian { sigma: 0.123 },
            NoiseLevel::Poisson { chi: 45.6 },
        ] {
            let mut doc = KvDoc::new();
            record_calibration(&mut doc, level, None);
            let doc = KvDoc::parse(&doc.render()).unwrap();
            assert_eq!(read_calibration(&doc).unwrap(), level);
        }
    }
}
