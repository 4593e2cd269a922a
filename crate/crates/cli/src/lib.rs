//! Command-line front end: config resolution, experiment orchestration, CSV/SVG output.
//!
//! Every run writes its outputs plus a `manifest.json` listing the resolved
//! config and a SHA-256 digest per file. Passing a manifest back through
//! `--config` repeats the run.

pub mod config;
pub mod manifest;
pub mod plot;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use flowslider::bench::{
    angle_report_from_series, build_suite, identity_scenario, reverse_csv, reverse_study,
    run_suite, two_gaussian_scenario, Scenario, SuiteConfig, SweepReport, SweepSpec,
    DEFAULT_ANGLE_BINS, TRAJECTORY_CSV_HEADER,
};
use flowslider::editor::Guidance;
use flowslider::geometry::angle_series;
use flowslider::metrics::FeatureMap;
use flowslider::sampler::generate_seeded;
use flowslider::{
    fmt_f64, run_edit, Condition, EditConfig, Error, InitMode, Result, Seed, State, TimeGrid,
    Variant,
};

pub use config::RunConfig;
pub use manifest::{FileDigest, RunManifest, MANIFEST_FILE};
pub use plot::{render_plot, AxisMap, PlotKind};

#[derive(Debug, Parser)]
#[command(name = "flowslider", version, about = "Continuous-strength Rectified Flow editing on analytic fields")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate samples from one condition of a scenario.
    Sample(Flags),
    /// Edit one source sample.
    Edit(Flags),
    /// Strength and baseline-knob sweep over a scenario suite.
    Sweep(Flags),
    /// Angle statistics between the fidelity and steering terms.
    Angles(Flags),
    /// Compare FlowSlider with naive scaling and linear interpolation.
    Ablate(Flags),
    /// Signed displacement along the mean axis for negative and positive strengths.
    Reverse(Flags),
    /// Render an SVG from a CSV file.
    Plot(Flags),
}

impl Command {
    pub fn parts(&self) -> (&'static str, &Flags) {
        match self {
            Command::Sample(f) => ("sample", f),
            Command::Edit(f) => ("edit", f),
            Command::Sweep(f) => ("sweep", f),
            Command::Angles(f) => ("angles", f),
            Command::Ablate(f) => ("ablate", f),
            Command::Reverse(f) => ("reverse", f),
            Command::Plot(f) => ("plot", f),
        }
    }
}

/// Flags shared by every subcommand; each mirrors a config-file key.
#[derive(Debug, Default, Args)]
pub struct Flags {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "out-dir")]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long = "init-mode")]
    pub init_mode: Option<InitMode>,
    #[arg(long = "omega-src", allow_negative_numbers = true)]
    pub omega_src: Option<f64>,
    #[arg(long = "omega-tar", allow_negative_numbers = true)]
    pub omega_tar: Option<f64>,
    #[arg(long = "T")]
    pub steps: Option<usize>,
    #[arg(long = "n-max")]
    pub n_max: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub s: Option<f64>,
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long, value_delimiter = ',')]
    pub variants: Option<Vec<Variant>>,
    #[arg(long)]
    pub suite: Option<String>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub strengths: Option<Vec<f64>>,
    #[arg(long = "omega-tar-sweep", value_delimiter = ',')]
    pub omega_tar_sweep: Option<Vec<f64>>,
    #[arg(long = "n-max-sweep", value_delimiter = ',')]
    pub n_max_sweep: Option<Vec<usize>>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long = "sample-index")]
    pub sample_index: Option<usize>,
    #[arg(long)]
    pub condition: Option<String>,
    #[arg(long)]
    pub kind: Option<PlotKind>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub angles: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<String>,
}

impl Flags {
    fn apply(&self, c: &mut RunConfig) {
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = &self.$f { c.$f = v.clone(); } )* };
        }
        set!(seed, out_dir, init_mode, omega_src, omega_tar, steps, n_max, s, variant, suite);
        set!(omega_tar_sweep, n_max_sweep, samples, scenario, sample_index, condition);
        macro_rules! set_opt {
            ($($f:ident),*) => { $( if self.$f.is_some() { c.$f = self.$f.clone(); } )* };
        }
        set_opt!(workers, variants, strengths, kind, data, angles, out);
    }
}

/// Parses `args` (program name first), runs the command and returns the exit status.
///
/// Usage errors print clap's message and return 2; runtime failures print a single
/// `error class=... message=...` line to stderr and return 1.
pub fn run_command<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
        }
    };
    match execute(&cli) {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            1
        }
    }
}

pub fn error_line(e: &Error) -> String {
    let message: String = e.to_string().split_whitespace().collect::<Vec<_>>().join(" ");
    format!("error class={} message={message}", e.class())
}

/// Resolves the config for `cli`, runs it and writes outputs plus the manifest.
pub fn execute(cli: &Cli) -> Result<RunManifest> {
    let (command, flags) = cli.command.parts();
    let mut config = RunConfig::default();
    if let Some(path) = &flags.config {
        let (loaded, from) = config::load(path)?;
        if let Some(from) = from {
            if from != command {
                return Err(Error::InvalidArgument(format!(
                    "manifest records command `{from}`, not `{command}`"
                )));
            }
        }
        config = loaded;
    }
    flags.apply(&mut config);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::Internal(e.to_string()))?;
    let mut run = Run::default();
    pool.install(|| match command {
        "sample" => cmd_sample(&config, &mut run),
        "edit" => cmd_edit(&config, &mut run),
        "sweep" => cmd_sweep(&config, &mut run),
        "angles" => cmd_angles(&config, &mut run),
        "ablate" => cmd_ablate(&config, &mut run),
        "reverse" => cmd_reverse(&config, &mut run),
        "plot" => cmd_plot(&config, &mut run),
        other => Err(Error::Internal(format!("unhandled command {other}"))),
    })?;
    run.finish(command, config)
}

/// Outputs accumulated by a command; written once, in order, by [`Run::finish`].
#[derive(Default)]
struct Run {
    inputs: Vec<FileDigest>,
    outputs: Vec<(String, Vec<u8>)>,
}

impl Run {
    fn input(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = std::fs::read(path)?;
        self.inputs.push(FileDigest::of(path.display().to_string(), &bytes));
        Ok(bytes)
    }

    fn output(&mut self, name: &str, contents: impl Into<Vec<u8>>) {
        self.outputs.push((name.to_string(), contents.into()));
    }

    fn finish(self, command: &str, config: RunConfig) -> Result<RunManifest> {
        std::fs::create_dir_all(&config.out_dir)?;
        let mut outputs = Vec::with_capacity(self.outputs.len());
        for (name, bytes) in &self.outputs {
            std::fs::write(config.out_dir.join(name), bytes)?;
            outputs.push(FileDigest::of(name.clone(), bytes));
        }
        let manifest = RunManifest {
            manifest_version: 1,
            tool: "flowslider".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed: config.seed,
            inputs: self.inputs,
            outputs,
            config,
        };
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        std::fs::write(manifest.config.out_dir.join(MANIFEST_FILE), text)?;
        Ok(manifest)
    }
}

fn edit_config(c: &RunConfig) -> Result<EditConfig> {
    Ok(EditConfig {
        variant: c.variant,
        strength: c.s,
        grid: TimeGrid::uniform(c.steps)?,
        n_max: c.n_max,
        guidance: Guidance {
            omega_src: c.omega_src,
            omega_tar: c.omega_tar,
        },
        init_mode: c.init_mode,
        seed: Seed(c.seed),
        record_decomposition: true,
    })
}

fn suite(c: &RunConfig, run: &mut Run) -> Result<Vec<Scenario>> {
    match c.suite.as_str() {
        "default" => build_suite(&SuiteConfig {
            seed: Seed(c.seed),
            ..SuiteConfig::default()
        }),
        "two_gaussian" => Ok(vec![two_gaussian_scenario(c.samples, Seed(c.seed))?]),
        "identity" => Ok(vec![identity_scenario(c.samples, Seed(c.seed))?]),
        path => {
            let bytes = run.input(Path::new(path))?;
            let cfg: SuiteConfig = serde_json::from_slice(&bytes)?;
            build_suite(&cfg)
        }
    }
}

fn scenario(c: &RunConfig, run: &mut Run) -> Result<Scenario> {
    match c.scenario.as_str() {
        "two_gaussian" => two_gaussian_scenario(c.samples, Seed(c.seed)),
        "identity" => identity_scenario(c.samples, Seed(c.seed)),
        name => suite(c, run)?
            .into_iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::InvalidArgument(format!("no scenario named `{name}` in suite `{}`", c.suite))),
    }
}

fn sweep_spec(c: &RunConfig, default_variants: &[Variant], knobs: bool) -> Result<SweepSpec> {
    let mut base = edit_config(c)?;
    base.variant = Variant::FlowSlider;
    Ok(SweepSpec {
        strengths: c.strengths.clone().unwrap_or_else(|| vec![1.0, 2.0, 3.0, 4.0, 5.0]),
        variants: c.variants.clone().unwrap_or_else(|| default_variants.to_vec()),
        omega_tar_sweep: if knobs { c.omega_tar_sweep.clone() } else { Vec::new() },
        n_max_sweep: if knobs { c.n_max_sweep.clone() } else { Vec::new() },
        base,
        keep_results: false,
    })
}

fn state_header(d: usize) -> String {
    (0..d).map(|j| format!("x{j}")).collect::<Vec<_>>().join(",")
}

fn state_row(x: &State) -> String {
    x.as_slice().iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(",")
}

fn trajectory_row(series: &str, step: usize, z: &State) -> String {
    let x = z.as_slice();
    format!("{series},{step},{},{}\n", fmt_f64(x[0]), fmt_f64(*x.get(1).unwrap_or(&0.0)))
}

fn errors_csv(report: &SweepReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["scenario", "sample", "variant", "s", "error"])
        .map_err(|e| Error::Internal(e.to_string()))?;
    for c in &report.cells {
        if let Err(msg) = &c.outcome {
            w.write_record([
                c.scenario.clone(),
                c.sample.to_string(),
                c.arm.label().to_string(),
                fmt_f64(c.s),
                msg.clone(),
            ])
            .map_err(|e| Error::Internal(e.to_string()))?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Internal(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Internal(e.to_string()))
}

fn cmd_sample(c: &RunConfig, run: &mut Run) -> Result<()> {
    let sc = scenario(c, run)?;
    let field = sc.field()?;
    let cond = Condition::id(c.condition.clone());
    let grid = TimeGrid::uniform(c.steps)?;
    let mut samples = format!("index,{}\n", state_header(sc.dim()));
    let mut traj = format!("{TRAJECTORY_CSV_HEADER}\n");
    for k in 0..c.samples {
        let g = generate_seeded(&field, &cond, Seed(c.seed).derive(k as u64), &grid)?;
        samples.push_str(&format!("{k},{}\n", state_row(g.output())));
        for (i, z) in g.states.iter().enumerate() {
            traj.push_str(&trajectory_row(&format!("sample_{k}"), i, z));
        }
    }
    let svg = render_plot(PlotKind::Trajectory2d, &traj)?;
    run.output("samples.csv", samples);
    run.output("trajectory.csv", traj);
    run.output("trajectory.svg", svg);
    Ok(())
}

fn cmd_edit(c: &RunConfig, run: &mut Run) -> Result<()> {
    let sc = scenario(c, run)?;
    let x_src = sc.samples.get(c.sample_index).ok_or_else(|| {
        Error::InvalidArgument(format!("sample index {} but scenario has {}", c.sample_index, sc.samples.len()))
    })?;
    let (c_src, c_tar) = sc.conditions();
    let result = run_edit(&sc.field()?, x_src, &c_src, &c_tar, &edit_config(c)?)?;
    let mut traj = format!("{TRAJECTORY_CSV_HEADER}\n");
    for rec in &result.steps {
        traj.push_str(&trajectory_row("z_edit", rec.i, &rec.z_edit));
    }
    traj.push_str(&trajectory_row("z_edit", 0, &result.x_edit));
    for rec in &result.steps {
        traj.push_str(&trajectory_row("z_src", rec.i, &rec.z_src));
    }
    traj.push_str(&trajectory_row("z_src", 0, x_src));
    let angles = angle_series(&result, format!("{}/{}", sc.name, c.sample_index)).to_csv();
    run.output("x_edit.csv", format!("{}\n{}\n", state_header(sc.dim()), state_row(&result.x_edit)));
    run.output("angles.csv", angles);
    run.output("trajectory.csv", traj);
    run.output("edit_result.json", serde_json::to_string_pretty(&result)? + "\n");
    Ok(())
}

fn sweep_outputs(report: &SweepReport, run: &mut Run) -> Result<()> {
    let detail = report.detail_csv();
    run.output("tradeoff.svg", render_plot(PlotKind::Tradeoff, &detail)?);
    run.output("detail.csv", detail);
    run.output("summary.csv", report.summary_csv());
    run.output("categories.csv", report.category_csv());
    run.output("endpoints.csv", report.endpoints_csv());
    run.output("errors.csv", errors_csv(report)?);
    Ok(())
}

fn cmd_sweep(c: &RunConfig, run: &mut Run) -> Result<()> {
    let scenarios = suite(c, run)?;
    let report = run_suite(&scenarios, &sweep_spec(c, &[Variant::FlowSlider], true)?, &FeatureMap::IdentityNormalize)?;
    sweep_outputs(&report, run)?;
    let stats = angle_report_from_series(&report.angle_series(), DEFAULT_ANGLE_BINS);
    run.output("angle_stats.csv", stats.to_csv());
    Ok(())
}

fn cmd_angles(c: &RunConfig, run: &mut Run) -> Result<()> {
    let scenarios = suite(c, run)?;
    let report = run_suite(&scenarios, &sweep_spec(c, &[Variant::FlowSlider], false)?, &FeatureMap::IdentityNormalize)?;
    let angles = report.angles_csv();
    let stats = angle_report_from_series(&report.angle_series(), DEFAULT_ANGLE_BINS);
    run.output("angle_hist.svg", render_plot(PlotKind::AngleHist, &angles)?);
    run.output("angles.csv", angles);
    run.output("angle_stats.csv", stats.to_csv());
    run.output("angle_stats.json", serde_json::to_string_pretty(&stats)? + "\n");
    Ok(())
}

fn cmd_ablate(c: &RunConfig, run: &mut Run) -> Result<()> {
    let scenarios = suite(c, run)?;
    let report = run_suite(&scenarios, &sweep_spec(c, &Variant::ALL, false)?, &FeatureMap::IdentityNormalize)?;
    sweep_outputs(&report, run)
}

fn cmd_reverse(c: &RunConfig, run: &mut Run) -> Result<()> {
    let sc = scenario(c, run)?;
    let strengths = c.strengths.clone().unwrap_or_else(|| vec![-3.0, -1.0, 0.0, 1.0, 3.0]);
    let rows = reverse_study(&sc, &strengths, &edit_config(c)?)?;
    run.output("reverse.csv", reverse_csv(&rows));
    Ok(())
}

fn cmd_plot(c: &RunConfig, run: &mut Run) -> Result<()> {
    let (kind, data) = match (&c.kind, &c.data, &c.angles) {
        (_, _, Some(angles)) if c.kind.is_none() || c.kind == Some(PlotKind::AngleHist) => {
            (PlotKind::AngleHist, angles.clone())
        }
        (Some(kind), Some(data), _) => (*kind, data.clone()),
        _ => {
            return Err(Error::InvalidArgument(
                "plot needs --angles <csv>, or --kind with --data <csv>".into(),
            ))
        }
    };
    let bytes = run.input(&data)?;
    let text = String::from_utf8(bytes).map_err(|_| Error::Parse {
        line: 0,
        column: 0,
        message: format!("{} is not UTF-8", data.display()),
    })?;
    let svg = render_plot(kind, &text)?;
    let name = c.out.clone().unwrap_or_else(|| {
        let k = serde_json::to_value(kind).ok().and_then(|v| v.as_str().map(String::from));
        format!("{}.svg", k.unwrap_or_else(|| "plot".into()))
    });
    run.output(&name, svg);
    Ok(())
}
