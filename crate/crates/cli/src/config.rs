//! Experiment configuration and its text form.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use hsphr::phantoms::{ImageSource, PhantomKind};
use hsphr::scenario::ScenarioSpec;
use hsphr::solver::GammaInit;
use hsphr::{FilterKind, NoiseKind, NoiseModel, PhaseAlignment, RankChoice, Schedule, SolverConfig};

use crate::kv::KvDoc;

/// Sections that describe the experiment. Anything else in a manifest
/// (`[run]`, `[calibration]`, ...) is a record of what happened and is
/// skipped when the file is read back as a config.
const CONFIG_SECTIONS: [&str; 9] = [
    "grid", "masks", "dispersion", "object", "noise", "solver", "filter", "sweep", "output",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    /// Final mean error for every (K, T).
    ChannelsByExperiments,
    /// Final per-channel error for every SNR.
    SnrByWavelength,
    /// Mean error trace for every SNR.
    SnrByIteration,
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Layout::ChannelsByExperiments => "k_t",
            Layout::SnrByWavelength => "snr_lambda",
            Layout::SnrByIteration => "snr_iteration",
        })
    }
}

impl FromStr for Layout {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "k_t" | "kt" => Ok(Layout::ChannelsByExperiments),
            "snr_lambda" => Ok(Layout::SnrByWavelength),
            "snr_iteration" => Ok(Layout::SnrByIteration),
            other => Err(anyhow!("unknown sweep layout '{other}' (k_t, snr_lambda, snr_iteration)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub layout: Layout,
    pub channels: Vec<usize>,
    pub experiments: Vec<usize>,
    pub snr_db: Vec<f64>,
    pub workers: usize,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            layout: Layout::ChannelsByExperiments,
            channels: vec![2, 4],
            experiments: vec![2, 6, 12],
            snr_db: vec![34.0, 44.0, 54.0],
            workers: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub scenario: ScenarioSpec,
    /// Solver settings. The likelihood is filled in from the observations
    /// at run time.
    pub solver: SolverConfig,
    pub sweep: SweepSpec,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioSpec::new(2, 6, 64),
            solver: SolverConfig::new(NoiseModel::Gaussian { sigma: 1.0 }),
            sweep: SweepSpec::default(),
            out: PathBuf::from("out"),
        }
    }
}

/// Tracks which keys were consumed so that typos are reported.
struct Reader<'a> {
    doc: &'a KvDoc,
    used: HashSet<(String, String)>,
}

impl<'a> Reader<'a> {
    fn raw(&mut self, section: &str, key: &str) -> Option<&'a str> {
        let v = self.doc.get(section, key)?;
        self.used.insert((section.to_string(), key.to_string()));
        Some(v)
    }

    fn read<T: FromStr>(&mut self, section: &str, key: &str, slot: &mut T) -> Result<()>
    where
        T::Err: fmt::Display,
    {
        if let Some(v) = self.raw(section, key) {
            *slot = v
                .parse()
                .map_err(|e| anyhow!("[{section}] {key} = '{v}': {e}"))?;
        }
        Ok(())
    }

    fn read_list<T: FromStr>(&mut self, section: &str, key: &str, slot: &mut Vec<T>) -> Result<()>
    where
        T::Err: fmt::Display,
    {
        if let Some(v) = self.raw(section, key) {
            *slot = parse_list(v).with_context(|| format!("[{section}] {key}"))?;
        }
        Ok(())
    }

    fn finish(self) -> Result<()> {
        for name in self.doc.section_names() {
            if !CONFIG_SECTIONS.contains(&name) {
                continue;
            }
            for (k, _) in self.doc.section(name).unwrap_or_default() {
                if !self.used.contains(&(name.to_string(), k.clone())) {
                    bail!("unknown key '{k}' in [{name}]");
                }
            }
        }
        Ok(())
    }
}

pub fn parse_list<T: FromStr>(text: &str) -> Result<Vec<T>>
where
    T::Err: fmt::Display,
{
    let items: Vec<T> = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|e| anyhow!("'{s}': {e}")))
        .collect::<Result<_>>()?;
    if items.is_empty() {
        bail!("empty list");
    }
    Ok(items)
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(", ")
}

fn parse_source(text: &str) -> Result<ImageSource> {
    let (kind, arg) = text
        .split_once(':')
        .ok_or_else(|| anyhow!("expected 'phantom:seed' or 'file:path', got '{text}'"))?;
    if kind.trim() == "file" {
        return Ok(ImageSource::File(PathBuf::from(arg.trim())));
    }
    let kind: PhantomKind = kind.parse()?;
    let seed = arg.trim().parse().with_context(|| format!("bad phantom seed in '{text}'"))?;
    Ok(ImageSource::Phantom { kind, seed })
}

fn alignment_name(a: PhaseAlignment) -> &'static str {
    match a {
        PhaseAlignment::PerChannel => "per_channel",
        PhaseAlignment::Joint => "joint",
    }
}

fn parse_alignment(text: &str) -> Result<PhaseAlignment> {
    match text {
        "per_channel" => Ok(PhaseAlignment::PerChannel),
        "joint" => Ok(PhaseAlignment::Joint),
        other => bail!("unknown alignment '{other}' (per_channel, joint)"),
    }
}

impl ExperimentConfig {
    pub fn from_doc(doc: &KvDoc) -> Result<Self> {
        for name in doc.section_names() {
            let known = CONFIG_SECTIONS.contains(&name)
                || ["run", "calibration", "artifacts", "heatmap"].contains(&name);
            if !known {
                bail!("unknown section [{name}]");
            }
        }
        let mut cfg = ExperimentConfig::default();
        let mut r = Reader {
            doc,
            used: HashSet::new(),
        };

        let sc = &mut cfg.scenario;
        r.read("grid", "channels", &mut sc.channels)?;
        r.read("grid", "lambda_min", &mut sc.band.0)?;
        r.read("grid", "lambda_max", &mut sc.band.1)?;
        r.read("grid", "size", &mut sc.object.size)?;
        sc.object.frame = hsphr::phantoms::default_frame(sc.object.size);
        r.read("grid", "frame", &mut sc.object.frame)?;
        r.read("grid", "pitch", &mut sc.pitch)?;
        r.read("grid", "distance", &mut sc.distance)?;

        r.read("masks", "experiments", &mut sc.experiments)?;
        r.read("masks", "cell", &mut sc.mask_cell)?;
        r.read("masks", "seed", &mut sc.mask_seed)?;

        r.read("dispersion", "b", &mut sc.dispersion.b)?;
        r.read("dispersion", "c_um2", &mut sc.dispersion.c)?;
        r.read("dispersion", "d_um4", &mut sc.dispersion.d)?;

        if let Some(v) = r.raw("object", "amplitude") {
            sc.object.amplitude = parse_source(v).context("[object] amplitude")?;
        }
        if let Some(v) = r.raw("object", "phase") {
            sc.object.phase = parse_source(v).context("[object] phase")?;
        }

        if let Some(v) = r.raw("noise", "kind") {
            sc.noise.kind = v.parse()?;
        }
        r.read("noise", "snr_db", &mut sc.noise.snr_db)?;
        r.read("noise", "seed", &mut sc.noise.seed)?;

        let s = &mut cfg.solver;
        r.read("solver", "iterations", &mut s.iterations)?;
        if let Some(v) = r.raw("solver", "gamma") {
            s.gamma = if v == "auto" {
                GammaInit::Auto
            } else {
                GammaInit::Value(v.parse().with_context(|| format!("[solver] gamma = '{v}'"))?)
            };
        }
        r.read("solver", "gamma_ratio", &mut s.gamma_ratio)?;
        r.read("solver", "beta", &mut s.beta.initial)?;
        r.read("solver", "beta_ratio", &mut s.beta.ratio)?;
        r.read("solver", "reg", &mut s.reg)?;
        r.read("solver", "warmup", &mut s.warmup)?;
        if let Some(v) = r.raw("solver", "dual") {
            s.dual = v.parse()?;
        }
        r.read("solver", "seed", &mut s.seed)?;
        if let Some(v) = r.raw("solver", "alignment") {
            s.alignment = parse_alignment(v)?;
        }

        let f = &mut s.filter;
        if let Some(v) = r.raw("filter", "kind") {
            f.kind = v.parse()?;
        }
        if let Some(v) = r.raw("filter", "rank") {
            f.rank = if v == "auto" {
                RankChoice::Auto
            } else {
                RankChoice::Fixed(v.parse().with_context(|| format!("[filter] rank = '{v}'"))?)
            };
        }
        r.read("filter", "threshold", &mut f.threshold)?;
        r.read("filter", "patch", &mut f.patch)?;
        r.read("filter", "stride", &mut f.stride)?;

        let w = &mut cfg.sweep;
        r.read("sweep", "layout", &mut w.layout)?;
        r.read_list("sweep", "channels", &mut w.channels)?;
        r.read_list("sweep", "experiments", &mut w.experiments)?;
        r.read_list("sweep", "snr_db", &mut w.snr_db)?;
        r.read("sweep", "workers", &mut w.workers)?;

        if let Some(v) = r.raw("output", "dir") {
            cfg.out = PathBuf::from(v);
        }
        r.finish()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let doc = KvDoc::parse(&text).with_context(|| format!("parsing {}", path.display()))?;
        Self::from_doc(&doc).with_context(|| format!("in {}", path.display()))
    }

    /// Every experiment field, in the same format [`from_doc`](Self::from_doc) reads.
    pub fn to_doc(&self) -> KvDoc {
        let mut d = KvDoc::new();
        let sc = &self.scenario;
        d.set("grid", "channels", sc.channels);
        d.set("grid", "lambda_min", sc.band.0);
        d.set("grid", "lambda_max", sc.band.1);
        d.set("grid", "size", sc.object.size);
        d.set("grid", "frame", sc.object.frame);
        d.set("grid", "pitch", sc.pitch);
        d.set("grid", "distance", sc.distance);

        d.set("masks", "experiments", sc.experiments);
        d.set("masks", "cell", sc.mask_cell);
        d.set("masks", "seed", sc.mask_seed);

        d.set("dispersion", "b", sc.dispersion.b);
        d.set("dispersion", "c_um2", sc.dispersion.c);
        d.set("dispersion", "d_um4", sc.dispersion.d);

        d.set("object", "amplitude", &sc.object.amplitude);
        d.set("object", "phase", &sc.object.phase);

        d.set("noise", "kind", sc.noise.kind);
        d.set("noise", "snr_db", sc.noise.snr_db);
        d.set("noise", "seed", sc.noise.seed);

        let s = &self.solver;
        d.set("solver", "iterations", s.iterations);
        match s.gamma {
            GammaInit::Auto => d.set("solver", "gamma", "auto"),
            GammaInit::Value(g) => d.set("solver", "gamma", g),
        }
        d.set("solver", "gamma_ratio", s.gamma_ratio);
        d.set("solver", "beta", s.beta.initial);
        d.set("solver", "beta_ratio", s.beta.ratio);
        d.set("solver", "reg", s.reg);
        d.set("solver", "warmup", s.warmup);
        d.set("solver", "dual", s.dual);
        d.set("solver", "seed", s.seed);
        d.set("solver", "alignment", alignment_name(s.alignment));

        let f = &s.filter;
        d.set("filter", "kind", f.kind);
        match f.rank {
            RankChoice::Auto => d.set("filter", "rank", "auto"),
            RankChoice::Fixed(n) => d.set("filter", "rank", n),
        }
        d.set("filter", "threshold", f.threshold);
        d.set("filter", "patch", f.patch);
        d.set("filter", "stride", f.stride);

        let w = &self.sweep;
        d.set("sweep", "layout", w.layout);
        d.set("sweep", "channels", join(&w.channels));
        d.set("sweep", "experiments", join(&w.experiments));
        d.set("sweep", "snr_db", join(&w.snr_db));
        d.set("sweep", "workers", w.workers);

        d.set("output", "dir", self.out.display());
        d
    }

    /// Checks everything that can be checked without synthesizing data.
    pub fn validate(&self) -> Result<()> {
        let sc = &self.scenario;
        if sc.channels == 0 || sc.experiments == 0 {
            bail!("need at least one channel and one experiment");
        }
        if sc.object.size < 8 {
            bail!("object size must be at least 8 pixels");
        }
        if sc.noise.kind != NoiseKind::None && !(sc.noise.snr_db.is_finite()) {
            bail!("noise kind {} needs a finite snr_db", sc.noise.kind);
        }
        sc.grid()?;
        // any positive likelihood parameter will do for a structural check
        let mut s = self.solver.clone();
        s.noise = NoiseModel::Gaussian { sigma: 1.0 };
        s.validate()?;
        if self.sweep.workers == 0 {
            bail!("sweep workers must be at least 1");
        }
        Ok(())
    }
}

/// Values given on the command line; each one replaces the config value.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub channels: Vec<usize>,
    pub experiments: Vec<usize>,
    pub snr_db: Vec<f64>,
    pub noise: Option<NoiseKind>,
    pub iterations: Option<usize>,
    pub warmup: Option<usize>,
    pub filter: Option<FilterKind>,
    pub gamma: Option<f64>,
    pub beta: Option<f64>,
    pub reg: Option<f64>,
    pub out: Option<PathBuf>,
}

impl Overrides {
    /// `--seed N` sets the mask, noise and solver seeds to `N`, `N + 1`
    /// and `N + 2`.
    pub fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        if let Some(seed) = self.seed {
            cfg.scenario.mask_seed = seed;
            cfg.scenario.noise.seed = seed.wrapping_add(1);
            cfg.solver.seed = seed.wrapping_add(2);
        }
        if let Some(w) = self.workers {
            cfg.sweep.workers = w;
        }
        // lists drive the sweep; a single value also sets the base experiment
        if !self.channels.is_empty() {
            cfg.sweep.channels = self.channels.clone();
            cfg.scenario.channels = self.channels[0];
        }
        if !self.experiments.is_empty() {
            cfg.sweep.experiments = self.experiments.clone();
            cfg.scenario.experiments = self.experiments[0];
        }
        if !self.snr_db.is_empty() {
            cfg.sweep.snr_db = self.snr_db.clone();
            cfg.scenario.noise.snr_db = self.snr_db[0];
        }
        if let Some(n) = self.noise {
            cfg.scenario.noise.kind = n;
        }
        if let Some(n) = self.iterations {
            cfg.solver.iterations = n;
        }
        if let Some(n) = self.warmup {
            cfg.solver.warmup = n;
        }
        if let Some(f) = self.filter {
            cfg.solver.filter.kind = f;
        }
        if let Some(g) = self.gamma {
            cfg.solver.gamma = GammaInit::Value(g);
        }
        if let Some(b) = self.beta {
            cfg.solver.beta = Schedule {
                initial: b,
                ..cfg.solver.beta
            };
        }
        if let Some(r) = self.reg {
            cfg.solver.reg = r;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        Ok(())
    }

    /// True when an override would change the simulated data rather than
    /// only the solver.
    pub fn touches_data(&self) -> bool {
        self.seed.is_some()
            || !self.channels.is_empty()
            || !self.experiments.is_empty()
            || !self.snr_db.is_empty()
            || self.noise.is_some()
    }
}
