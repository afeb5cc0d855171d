use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;

use cifusion::ci::{solve_ci, CostFunction};
use cifusion::error::Error;
use cifusion::known_cross::{bar_shalom_campo, optimal_fusion_known_cross};
use cifusion::sim::{init_network, run_schedule, NoiseSpec, Observations, Schedule, Topology};
use cifusion::verify::{
    adversarial_x_search, lmi_certificate, lmi_search, monte_carlo_joint, petersen_certificate,
    tau_certificate, violation_tolerance, FusionRule, LinearFusionRule, PetersenOutcome,
};

mod input;
mod output;

use input::InputError;
use output::{num, Object};

#[derive(Parser, Debug)]
#[command(
    name = "cifusion",
    version,
    about = "Covariance intersection for partial state estimates"
)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fuse the two estimates of a problem file.
    Fuse {
        file: PathBuf,
        #[arg(long, default_value = "det")]
        cost: CostFunction,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tabulate the cost over a uniform alpha grid as CSV.
    Scan {
        file: PathBuf,
        #[arg(long, default_value = "det")]
        cost: CostFunction,
        #[arg(long, default_value_t = 101)]
        grid: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Certify that the fused covariance is conservative.
    Verify {
        file: PathBuf,
        #[arg(long, default_value = "det")]
        cost: CostFunction,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output of `fuse` to certify instead of re-solving.
        #[arg(long)]
        result: Option<PathBuf>,
    },
    /// Optimal fusion with the cross-covariance from the truth block.
    Known {
        file: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pairwise fusion over a simulated network.
    Sim {
        #[arg(long, default_value_t = 5)]
        nodes: usize,
        #[arg(long, value_enum, default_value_t = TopologyArg::Ring)]
        topology: TopologyArg,
        #[arg(long, default_value_t = 20)]
        events: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "det")]
        cost: CostFunction,
        #[arg(long, default_value_t = 2)]
        state_dim: usize,
        #[arg(long, value_enum, default_value_t = Layout::Axes)]
        layout: Layout,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TopologyArg {
    Chain,
    Ring,
    Random,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Layout {
    Axes,
    Full,
    Random,
    FirstAxis,
}

/// Failure classes mapped onto exit codes 2 and 3.
#[derive(Debug)]
pub enum Failure {
    Input(String),
    Internal(String),
}

impl From<InputError> for Failure {
    fn from(e: InputError) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InternalInconsistency(_)
            | Error::SingularSigma { .. }
            | Error::Schedule { .. }
            | Error::DegenerateDirection(_)
            | Error::InvalidFamilyParameter { .. } => Failure::Internal(e.to_string()),
            _ => Failure::Input(e.to_string()),
        }
    }
}

const PASS: u8 = 0;
const CERT_FAIL: u8 = 1;

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => std::fs::write(p, text)
            .map_err(|e| Failure::Input(format!("cannot write {}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load(file: &Path) -> Result<input::ProblemFile, Failure> {
    input::parse_problem(&input::read_json(file)?)
}

fn cmd_fuse(file: &Path, cost: CostFunction, out: Option<&Path>) -> Result<u8, Failure> {
    let pf = load(file)?;
    let r = solve_ci(&pf.problem, cost)?;
    let d = &r.diagnostics;
    let note = d.note.as_deref().map_or("null".into(), output::string);
    let json = Object::new()
        .field("alpha", num(r.alpha))
        .field("cost", output::string(cost.name()))
        .field("K1", output::matrix(&r.k1))
        .field("K2", output::matrix(&r.k2))
        .field("P_hat", output::matrix(r.p_hat.as_matrix()))
        .field("fused_x", output::vector(&r.fused_x))
        .field("cost_value", num(r.cost_value))
        .field("lmi_min_eig", d.lmi_min_eig.map_or("null".into(), num))
        .field("branch", output::string(d.branch.label()))
        .field("note", note)
        .render();
    emit(out, &json)?;
    eprintln!("alpha = {:.16e} ({})", r.alpha, d.branch.label());
    Ok(PASS)
}

fn cmd_scan(
    file: &Path,
    cost: CostFunction,
    grid: usize,
    out: Option<&Path>,
) -> Result<u8, Failure> {
    if grid < 2 {
        return Err(Failure::Input("--grid must be at least 2".into()));
    }
    let pf = load(file)?;
    let pair = pf.problem.sigma_pair();
    let rows: Vec<(f64, Option<f64>)> = (0..grid)
        .map(|k| {
            let a = k as f64 / (grid - 1) as f64;
            let v = cost.evaluate_information(&pair.sigma_alpha(a)?);
            Ok((a, v.is_finite().then(|| v.value())))
        })
        .collect::<Result<_, Error>>()?;
    let best = rows
        .iter()
        .enumerate()
        .filter_map(|(i, (_, v))| v.map(|v| (i, v)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i);
    let mut csv = String::from("alpha,cost,finite,argmin\n");
    for (i, (a, v)) in rows.iter().enumerate() {
        let mark = u8::from(Some(i) == best);
        match v {
            Some(v) => writeln!(csv, "{},{},1,{mark}", num(*a), num(*v)),
            None => writeln!(csv, "{},,0,{mark}", num(*a)),
        }
        .expect("write to string");
    }
    emit(out, &csv)?;
    Ok(PASS)
}

struct Verdict {
    method: &'static str,
    passed: bool,
    detail: String,
}

fn cmd_verify(
    file: &Path,
    cost: CostFunction,
    samples: usize,
    seed: u64,
    result: Option<&Path>,
) -> Result<u8, Failure> {
    let pf = load(file)?;
    let problem = &pf.problem;
    let (mut rule, alpha) = match result {
        Some(path) => {
            let r = input::parse_rule(&input::read_json(path)?, problem)?;
            (
                FusionRule {
                    k1: r.k1,
                    k2: r.k2,
                    p_hat: r.p_hat,
                },
                r.alpha,
            )
        }
        None => {
            let r = solve_ci(problem, cost)?;
            (FusionRule::from_rule(&r), r.alpha)
        }
    };
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Failure::Input(format!(
            "alpha = {alpha} lies outside [0, 1]"
        )));
    }
    if let Some(p) = pf.p_hat_override.clone() {
        rule.p_hat = p;
    }
    let tol = violation_tolerance(rule.p_hat());
    let mut verdicts = Vec::new();

    let at = lmi_certificate(&rule, problem, alpha)?;
    let lmi = if at.passed {
        Verdict {
            method: "lmi",
            passed: true,
            detail: format!("alpha={} min_eig={}", num(alpha), num(at.lmi_min_eig)),
        }
    } else {
        let best = lmi_search(&rule, problem)?;
        Verdict {
            method: "lmi",
            passed: best.passed,
            detail: format!(
                "alpha={} min_eig={} best_alpha={} best_min_eig={}",
                num(alpha),
                num(at.lmi_min_eig),
                num(best.alpha),
                num(best.lmi_min_eig)
            ),
        }
    };
    verdicts.push(lmi);

    verdicts.push(match petersen_certificate(&rule, problem) {
        Ok(PetersenOutcome::Feasible { epsilon, value }) => Verdict {
            method: "petersen",
            passed: true,
            detail: format!("epsilon={} value={}", num(epsilon), num(value)),
        },
        Ok(PetersenOutcome::Infeasible { epsilon, value }) => Verdict {
            method: "petersen",
            passed: false,
            detail: format!("epsilon={} value={}", num(epsilon), num(value)),
        },
        Err(Error::DegenerateQ(why)) => {
            let ends = [
                tau_certificate(&rule, problem, 0.0)?,
                tau_certificate(&rule, problem, 1.0)?,
            ];
            let hit = ends.iter().find(|c| c.passed);
            Verdict {
                method: "petersen",
                passed: hit.is_some(),
                detail: match hit {
                    Some(c) => format!(
                        "{why}; endpoint alpha={} min_eig={}",
                        num(c.alpha),
                        num(c.lmi_min_eig)
                    ),
                    None => format!("{why}; both endpoint checks fail"),
                },
            }
        }
        Err(e) => return Err(e.into()),
    });

    let adv = adversarial_x_search(&rule, problem, samples, seed)?;
    verdicts.push(Verdict {
        method: "adversarial",
        passed: adv <= tol,
        detail: format!("samples={samples} max_violation={}", num(adv)),
    });
    let mc = monte_carlo_joint(&rule, problem, samples, seed)?;
    verdicts.push(Verdict {
        method: "monte_carlo",
        passed: mc <= tol,
        detail: format!("samples={samples} max_violation={}", num(mc)),
    });

    if let Some(joint) = pf.joint() {
        let joint = joint?;
        let mut k = DMatrix::zeros(problem.n(), problem.p1() + problem.p2());
        k.columns_mut(0, problem.p1()).copy_from(rule.k1());
        k.columns_mut(problem.p1(), problem.p2())
            .copy_from(rule.k2());
        let cov = joint.assembled().congruence(&k);
        let margin = rule.p_hat().sub(&cov).min_eigenvalue();
        verdicts.push(Verdict {
            method: "truth",
            passed: margin >= -tol,
            detail: format!("margin={}", num(margin)),
        });
    }

    println!("{:<12} {:<8} detail", "method", "verdict");
    for v in &verdicts {
        println!(
            "{:<12} {:<8} {}",
            v.method,
            if v.passed { "pass" } else { "FAIL" },
            v.detail
        );
    }
    Ok(if verdicts.iter().all(|v| v.passed) {
        PASS
    } else {
        CERT_FAIL
    })
}

fn cmd_known(file: &Path, out: Option<&Path>) -> Result<u8, Failure> {
    let pf = load(file)?;
    let joint = pf
        .joint()
        .ok_or_else(|| Failure::Input("truth block with P1, P2 and P12 is required".into()))??;
    let problem = &pf.problem;
    let r = optimal_fusion_known_cross(problem, &joint)?;
    let inv = r.p_star.as_sym().cholesky_inverse()?;
    let mut json = Object::new()
        .field("K1", output::matrix(&r.k1()))
        .field("K2", output::matrix(&r.k2()))
        .field("P_star", output::matrix(r.p_star.as_matrix()))
        .field("P_star_inverse", output::matrix(inv.as_matrix()))
        .field("fused_x", output::vector(&r.fused_estimate(problem)));
    let n = problem.n();
    let eye = DMatrix::identity(n, n);
    if problem.est1().h() == &eye && problem.est2().h() == &eye {
        let bsc = bar_shalom_campo(&joint)?;
        let residual = (&r.k_star - &bsc.k_star)
            .amax()
            .max((r.p_star.as_matrix() - bsc.p_star.as_matrix()).amax());
        let block = Object::new()
            .field("K1", output::matrix(&bsc.k1()))
            .field("K2", output::matrix(&bsc.k2()))
            .field("P_star", output::matrix(bsc.p_star.as_matrix()))
            .field("residual", num(residual));
        json = json.field("bar_shalom_campo", block.inline());
    }
    let warnings: Vec<String> = r.warnings.iter().map(|w| output::string(w)).collect();
    json = json.field("warnings", format!("[{}]", warnings.join(", ")));
    emit(out, &json.render())?;
    Ok(PASS)
}

#[allow(clippy::too_many_arguments)]
fn cmd_sim(
    nodes: usize,
    topology: TopologyArg,
    events: usize,
    seed: u64,
    cost: CostFunction,
    state_dim: usize,
    layout: Layout,
    out: Option<&Path>,
) -> Result<u8, Failure> {
    let noise = NoiseSpec {
        observations: match layout {
            Layout::Axes => Observations::Axes,
            Layout::Full => Observations::Full,
            Layout::Random => Observations::Random,
            Layout::FirstAxis => Observations::FirstAxis,
        },
        ..NoiseSpec::default()
    };
    let (mut network, mut truth) = init_network(state_dim, nodes, seed, &noise)?;
    let topology = match topology {
        TopologyArg::Chain => Topology::Chain,
        TopologyArg::Ring => Topology::Ring,
        TopologyArg::Random => Topology::Random { seed },
    };
    let schedule = Schedule::generate(topology, nodes, events, cost)?;
    let report = run_schedule(&mut network, &mut truth, &schedule)?;
    emit(out, &report.to_text())?;
    let violations = report.violations();
    eprintln!(
        "{} events, {} fused, {violations} violations",
        report.events.len(),
        report.fused()
    );
    Ok(if violations == 0 { PASS } else { CERT_FAIL })
}

fn run(args: Args) -> Result<u8, Failure> {
    match args.command {
        Command::Fuse { file, cost, out } => cmd_fuse(&file, cost, out.as_deref()),
        Command::Scan {
            file,
            cost,
            grid,
            out,
        } => cmd_scan(&file, cost, grid, out.as_deref()),
        Command::Verify {
            file,
            cost,
            samples,
            seed,
            result,
        } => cmd_verify(&file, cost, samples, seed, result.as_deref()),
        Command::Known { file, out } => cmd_known(&file, out.as_deref()),
        Command::Sim {
            nodes,
            topology,
            events,
            seed,
            cost,
            state_dim,
            layout,
            out,
        } => cmd_sim(
            nodes,
            topology,
            events,
            seed,
            cost,
            state_dim,
            layout,
            out.as_deref(),
        ),
    }
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(args) {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Input(msg)) => {
            eprintln!("input error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Internal(msg)) => {
            eprintln!("internal error: {msg}");
            ExitCode::from(3)
        }
    }
}
