//! End-to-end runs and their manifests.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use platoonx::analysis::{analyze, Analysis, AnalysisConfig};
use platoonx::compare::{compare, receiver_counts};
use platoonx::edca::transmission_time;
use platoonx::hearing::{hearing_series, HearingMatrix};
use platoonx::kinematics::{simulate_movement, Trajectory};
use platoonx::metrics::HiddenFormula;
use platoonx::scenario::{load_scenario, Scenario, SeSource};
use platoonx::simulator::{run_sim, SimConfig, SimResult};

use crate::output;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Analyze,
    Simulate,
    Compare,
    Trajectory,
}

/// Vehicles to analyse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    /// 1-based platoon and vehicle.
    Vehicle {
        platoon: usize,
        vehicle: usize,
    },
    All,
}

impl std::str::FromStr for Target {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("all") {
            return Ok(Target::All);
        }
        let (k, i) = s
            .split_once(',')
            .ok_or_else(|| format!("expected `k,i` or `all`, got `{s}`"))?;
        let parse = |x: &str| match x.trim().parse::<usize>() {
            Ok(0) | Err(_) => Err(format!("`{x}` is not a 1-based index")),
            Ok(n) => Ok(n),
        };
        Ok(Target::Vehicle {
            platoon: parse(k)?,
            vehicle: parse(i)?,
        })
    }
}

/// Everything that determines a run's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub mode: Mode,
    /// Scenario document exactly as read.
    pub scenario_document: String,
    pub scenario_path: String,
    pub target: Target,
    /// Overrides the document's `run.rng_seed` when set.
    pub seed: Option<u64>,
    pub replications: usize,
    pub hidden_formula: HiddenFormula,
    pub se_source: Option<SeSource>,
    pub events: bool,
    pub pairs: bool,
}

impl RunSpec {
    pub fn run_id(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("run spec serialises");
        hex::encode(&Sha256::digest(&canonical)[..8])
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Convergence {
    pub max_iterations: usize,
    pub distinct_neighbourhoods: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub run_id: String,
    pub version: String,
    pub spec: RunSpec,
    pub effective_seed: u64,
    pub workers: usize,
    pub wall_time_s: f64,
    pub convergence: Option<Convergence>,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Scenario,
    Manifest,
    Movement,
    Analysis,
    Output,
}

impl Stage {
    pub fn exit_code(self) -> i32 {
        match self {
            Stage::Scenario | Stage::Manifest => 2,
            Stage::Movement => 3,
            Stage::Analysis => 4,
            Stage::Output => 5,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Scenario => "scenario",
            Stage::Manifest => "manifest",
            Stage::Movement => "movement",
            Stage::Analysis => "analysis",
            Stage::Output => "output",
        })
    }
}

#[derive(Debug)]
pub struct RunError {
    pub stage: Stage,
    pub message: String,
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage {}: {}", self.stage, self.message)
    }
}

impl std::error::Error for RunError {}

fn fail(stage: Stage) -> impl Fn(&dyn fmt::Display) -> RunError {
    move |e| RunError {
        stage,
        message: e.to_string(),
    }
}

pub fn read_scenario(path: &Path) -> Result<String, RunError> {
    fs::read_to_string(path).map_err(|e| RunError {
        stage: Stage::Scenario,
        message: format!("{}: {e}", path.display()),
    })
}

pub fn read_manifest(path: &Path) -> Result<Manifest, RunError> {
    let text = fs::read_to_string(path).map_err(|e| fail(Stage::Manifest)(&format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| fail(Stage::Manifest)(&e))
}

/// Load the scenario with the run spec's overrides applied.
pub fn build_scenario(spec: &RunSpec) -> Result<Scenario, RunError> {
    let err = fail(Stage::Scenario);
    let mut doc: serde_json::Value = serde_json::from_str(&spec.scenario_document).map_err(|e| err(&e))?;
    if let Some(seed) = spec.seed {
        let run = doc
            .get_mut("run")
            .and_then(|r| r.as_object_mut())
            .ok_or_else(|| err(&"document has no `run` section"))?;
        run.insert("rng_seed".into(), seed.into());
    }
    let scenario = load_scenario(&doc.to_string()).map_err(|e| err(&e))?;
    match spec.se_source {
        Some(src) => scenario.with_se_source(src).map_err(|e| err(&e)),
        None => Ok(scenario),
    }
}

fn targets(spec: &RunSpec, tr: &Trajectory) -> Result<Vec<usize>, RunError> {
    match spec.target {
        Target::All => Ok((0..tr.vehicles.len()).collect()),
        Target::Vehicle { platoon, vehicle } => {
            tr.vehicle_index(platoon - 1, vehicle - 1)
                .map(|u| vec![u])
                .ok_or_else(|| RunError {
                    stage: Stage::Scenario,
                    message: format!("no vehicle {platoon},{vehicle} in the scenario"),
                })
        }
    }
}

struct Pipeline {
    scenario: Scenario,
    trajectory: Trajectory,
    hearings: Vec<HearingMatrix>,
    targets: Vec<usize>,
}

impl Pipeline {
    fn new(spec: &RunSpec) -> Result<Self, RunError> {
        let scenario = build_scenario(spec)?;
        let trajectory = simulate_movement(&scenario).map_err(|e| fail(Stage::Movement)(&e))?;
        let hearings = hearing_series(&trajectory, &scenario.geometry);
        let targets = targets(spec, &trajectory)?;
        Ok(Pipeline {
            scenario,
            trajectory,
            hearings,
            targets,
        })
    }

    fn analyze(&self, spec: &RunSpec) -> Result<Analysis, RunError> {
        let cfg = AnalysisConfig {
            hidden: spec.hidden_formula,
            ..AnalysisConfig::default()
        };
        analyze(&self.scenario, &self.trajectory, &self.hearings, &self.targets, &cfg)
            .map_err(|e| fail(Stage::Analysis)(&e))
    }

    fn simulate(&self, spec: &RunSpec) -> SimResult {
        let cfg = SimConfig {
            replications: spec.replications,
            record_events: spec.events,
            ..SimConfig::new(self.scenario.run.rng_seed)
        };
        run_sim(&self.scenario, &self.hearings, &self.targets, &cfg)
    }

    fn write_analysis(&self, spec: &RunSpec, dir: &Path, run_id: &str, a: &Analysis) -> std::io::Result<Vec<String>> {
        let mut files = output::write_analysis(dir, run_id, &self.trajectory, a)?;
        if spec.pairs {
            let t_tr = transmission_time(&self.scenario.phy);
            files.extend(output::write_pairs(
                dir,
                run_id,
                &self.trajectory,
                a,
                &self.hearings,
                t_tr,
                self.scenario.phy.slot,
                spec.hidden_formula,
            )?);
        }
        Ok(files)
    }

    fn write_simulation(&self, dir: &Path, run_id: &str, r: &SimResult) -> std::io::Result<Vec<String>> {
        let mut files = output::write_simulation(dir, run_id, &self.trajectory, r)?;
        if !r.events.is_empty() {
            files.extend(output::write_events(dir, run_id, &r.events)?);
        }
        Ok(files)
    }
}

fn prefixed(prefix: &str, files: Vec<String>) -> Vec<String> {
    files.into_iter().map(|f| format!("{prefix}/{f}")).collect()
}

/// Run `spec`, writing its outputs and manifest into `out`.
pub fn execute(spec: &RunSpec, out: &Path, workers: usize) -> Result<Manifest, RunError> {
    let started = Instant::now();
    let run_id = spec.run_id();
    let io_err = fail(Stage::Output);
    fs::create_dir_all(out).map_err(|e| io_err(&format!("{}: {e}", out.display())))?;

    let pipeline = Pipeline::new(spec)?;
    log::info!(
        "run {run_id}: {} vehicles, {} samples, {} target(s)",
        pipeline.trajectory.vehicles.len(),
        pipeline.trajectory.steps(),
        pipeline.targets.len()
    );

    let mut convergence = None;
    let mut outputs = Vec::new();
    let note = |a: &Analysis| Convergence {
        max_iterations: a.max_iterations,
        distinct_neighbourhoods: a.solves,
    };
    match spec.mode {
        Mode::Trajectory => {
            outputs = output::write_trajectory(out, &run_id, &pipeline.trajectory).map_err(|e| io_err(&e))?;
        }
        Mode::Analyze => {
            let a = pipeline.analyze(spec)?;
            convergence = Some(note(&a));
            outputs = pipeline
                .write_analysis(spec, out, &run_id, &a)
                .map_err(|e| io_err(&e))?;
        }
        Mode::Simulate => {
            let r = pipeline.simulate(spec);
            outputs = pipeline.write_simulation(out, &run_id, &r).map_err(|e| io_err(&e))?;
        }
        Mode::Compare => {
            let a = pipeline.analyze(spec)?;
            let r = pipeline.simulate(spec);
            convergence = Some(note(&a));
            let (adir, sdir) = (out.join("analytical"), out.join("simulated"));
            for d in [&adir, &sdir] {
                fs::create_dir_all(d).map_err(|e| io_err(&e))?;
            }
            let files = pipeline
                .write_analysis(spec, &adir, &run_id, &a)
                .map_err(|e| io_err(&e))?;
            outputs.extend(prefixed("analytical", files));
            let files = pipeline.write_simulation(&sdir, &run_id, &r).map_err(|e| io_err(&e))?;
            outputs.extend(prefixed("simulated", files));
            let rows = compare(&a, &r, &receiver_counts(&pipeline.hearings));
            for row in rows.iter().filter(|r| r.vehicle.is_none()) {
                log::info!(
                    "AC{}: T {:.1} µs analytical, {:.1} µs simulated; PDR {:.4} vs {:.4}",
                    row.ac,
                    row.t_analytical * 1e6,
                    row.t_simulated.unwrap_or(f64::NAN) * 1e6,
                    row.pdr_analytical.unwrap_or(f64::NAN),
                    row.pdr_simulated.unwrap_or(f64::NAN),
                );
            }
            outputs.extend(output::write_compare(out, &run_id, &pipeline.trajectory, &rows).map_err(|e| io_err(&e))?);
        }
    }

    let manifest = Manifest {
        run_id,
        version: env!("CARGO_PKG_VERSION").to_string(),
        spec: spec.clone(),
        effective_seed: pipeline.scenario.run.rng_seed,
        workers,
        wall_time_s: started.elapsed().as_secs_f64(),
        convergence,
        outputs,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    fs::write(out.join("manifest.json"), text + "\n").map_err(|e| io_err(&e))?;
    Ok(manifest)
}

pub fn default_out(mode: Mode) -> PathBuf {
    PathBuf::from("out").join(match mode {
        Mode::Analyze => "analyze",
        Mode::Simulate => "simulate",
        Mode::Compare => "compare",
        Mode::Trajectory => "trajectory",
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn target_parsing() {
        assert_eq!(
            "1,1".parse::<Target>().unwrap(),
            Target::Vehicle { platoon: 1, vehicle: 1 }
        );
        assert_eq!(
            " 3, 2".parse::<Target>().unwrap(),
            Target::Vehicle { platoon: 3, vehicle: 2 }
        );
        assert_eq!("ALL".parse::<Target>().unwrap(), Target::All);
        assert!("0,1".parse::<Target>().is_err());
        assert!("1".parse::<Target>().is_err());
    }
}
