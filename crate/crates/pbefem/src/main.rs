//! Thin command-line front end: `run` executes a preset campaign or study
//! and writes report.csv / manifest.txt / level_*.vtk; `verify` runs one of
//! the library's self-check suites. Everything here is reachable through
//! library calls; the binary only parses options and writes files.

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use pbefem::amr::{self, CampaignConfig, FluxMethod, Indicator, Marking};
use pbefem::preset::{self, PresetKind};
use pbefem::{report, verify, vtk};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "pbefem",
    about = "semilinear interface problems with guaranteed error bounds",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a preset experiment and write its artifacts.
    Run {
        /// Preset name (see `--list`).
        preset: Option<String>,
        /// List available presets and exit.
        #[arg(long)]
        list: bool,
        #[arg(long, value_enum)]
        indicator: Option<IndicatorArg>,
        #[arg(long, value_enum)]
        marking: Option<MarkingArg>,
        /// Bulk fraction for greedy marking.
        #[arg(long)]
        bulk: Option<f64>,
        /// Element budget.
        #[arg(long)]
        stop: Option<usize>,
        /// Quadrature order (1, 2, 3, 5, 7).
        #[arg(long)]
        quad_order: Option<u32>,
        /// Worker-thread cap.
        #[arg(long)]
        threads: Option<usize>,
        /// Flux reconstruction variant.
        #[arg(long, value_enum)]
        flux: Option<FluxArg>,
        /// Bisection sweeps for the reference mesh (2 = one size halving).
        #[arg(long)]
        ref_sweeps: Option<usize>,
        /// Skip the reference solve and the true-error columns.
        #[arg(long)]
        no_reference: bool,
        /// Output directory.
        #[arg(long, default_value = "out")]
        output: PathBuf,
        /// Key-value configuration file; command-line flags win.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run a self-check suite and print a pass/fail table.
    Verify {
        #[arg(value_enum)]
        suite: SuiteArg,
        #[arg(long)]
        threads: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum IndicatorArg {
    Functional,
    Fluxdiff,
    True,
}

#[derive(Clone, Copy, ValueEnum)]
enum MarkingArg {
    Average,
    Greedy,
}

#[derive(Clone, Copy, ValueEnum)]
enum FluxArg {
    Equilibrated,
    Gradavg,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Scalar,
    Identity,
    Equilibration,
    Convergence,
}

fn read_config(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("config line {}: expected 'key = value', got '{line}'", i + 1);
        };
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn init_threads(threads: Option<usize>) -> usize {
    let n = threads.unwrap_or_else(|| {
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    });
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    n
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Verify { suite, threads } => {
            init_threads(threads);
            let rows = match suite {
                SuiteArg::Scalar => verify::scalar_suite(),
                SuiteArg::Identity => verify::identity_suite(),
                SuiteArg::Equilibration => verify::equilibration_suite(),
                SuiteArg::Convergence => verify::convergence_suite(),
            };
            print!("{}", verify::render(&rows));
            if !verify::all_pass(&rows) {
                std::process::exit(1);
            }
            Ok(())
        }
        Command::Run {
            preset,
            list,
            indicator,
            marking,
            bulk,
            stop,
            quad_order,
            threads,
            flux,
            ref_sweeps,
            no_reference,
            output,
            config,
        } => {
            if list {
                for name in preset::names() {
                    println!("{name}");
                }
                return Ok(());
            }
            let file = config.as_deref().map(read_config).transpose()?.unwrap_or_default();
            let get = |key: &str| file.get(key).cloned();
            let Some(name) = preset.or_else(|| get("preset")) else {
                bail!("no preset given (positional argument or 'preset = ...' in the config)");
            };
            let Some(mut p) = preset::by_name(&name) else {
                bail!("unknown preset '{name}'; available: {}", preset::names().join(", "));
            };

            let threads = threads.or_else(|| get("threads").and_then(|v| v.parse().ok()));
            let nthreads = init_threads(threads);

            let mut cfg = p.default_config.clone();
            let indicator = indicator
                .map(|i| match i {
                    IndicatorArg::Functional => Indicator::FunctionalEta,
                    IndicatorArg::Fluxdiff => Indicator::FluxDifference,
                    IndicatorArg::True => Indicator::TrueError,
                })
                .or_else(|| match get("indicator").as_deref() {
                    Some("functional") => Some(Indicator::FunctionalEta),
                    Some("fluxdiff") => Some(Indicator::FluxDifference),
                    Some("true") => Some(Indicator::TrueError),
                    _ => None,
                });
            if let Some(i) = indicator {
                cfg.indicator = i;
            }
            let bulk = bulk.or_else(|| get("bulk").and_then(|v| v.parse().ok()));
            let marking = marking
                .map(|m| match m {
                    MarkingArg::Average => Marking::Average,
                    MarkingArg::Greedy => Marking::GreedyBulk(bulk.unwrap_or(0.3)),
                })
                .or_else(|| match get("marking").as_deref() {
                    Some("average") => Some(Marking::Average),
                    Some("greedy") => Some(Marking::GreedyBulk(bulk.unwrap_or(0.3))),
                    _ => None,
                });
            if let Some(m) = marking {
                cfg.marking = m;
            } else if let Some(theta) = bulk {
                cfg.marking = Marking::GreedyBulk(theta);
            }
            if let Some(f) = flux {
                cfg.flux_method = match f {
                    FluxArg::Equilibrated => FluxMethod::Equilibrated,
                    FluxArg::Gradavg => FluxMethod::GradientAveraging,
                };
            } else if let Some(f) = get("flux") {
                cfg.flux_method = match f.as_str() {
                    "equilibrated" => FluxMethod::Equilibrated,
                    "gradavg" => FluxMethod::GradientAveraging,
                    other => bail!("bad flux method '{other}'"),
                };
            }
            if let Some(s) = stop.or_else(|| get("stop").and_then(|v| v.parse().ok())) {
                cfg.stop_elements = s;
            }
            if let Some(q) = quad_order.or_else(|| get("quad_order").and_then(|v| v.parse().ok())) {
                p.spec.quad_order = q;
            }
            if let Some(rs) = ref_sweeps.or_else(|| get("ref_sweeps").and_then(|v| v.parse().ok())) {
                cfg.ref_sweeps = rs;
            }
            if no_reference || get("no_reference").as_deref() == Some("true") {
                cfg.with_reference = false;
            }

            std::fs::create_dir_all(&output)
                .with_context(|| format!("creating {}", output.display()))?;
            match p.kind {
                PresetKind::Campaign | PresetKind::Trivial => run_campaign_cmd(&p, &cfg, &output, nthreads),
                PresetKind::Manufactured => run_manufactured_cmd(&output),
                PresetKind::LinearCollapse => run_collapse_cmd(&output),
            }
        }
    }
}

fn run_campaign_cmd(
    p: &preset::Preset,
    cfg: &CampaignConfig,
    output: &Path,
    threads: usize,
) -> Result<()> {
    let cp = p.campaign_problem()?;
    let result = amr::run_campaign(&cp, cfg)?;
    let csv = report::campaign_csv(&result);
    std::fs::write(output.join("report.csv"), &csv)?;
    let manifest = report::manifest(&result, p.name, &p.notes, verify::seed(), threads);
    std::fs::write(output.join("manifest.txt"), manifest)?;
    for (record, (mesh, u)) in result
        .levels
        .iter()
        .zip(result.meshes.iter().zip(&result.solutions))
    {
        vtk::write_vtk(
            mesh,
            output.join(format!("level_{:03}.vtk", record.level)),
            &[("u", u.values())],
            &[
                ("eta2", &record.majorant.per_element_eta2),
                ("div_y", &record.div_y),
            ],
        )?;
    }
    // console summary: one line per level
    println!(
        "{:>5} {:>8} {:>12} {:>12} {:>9} {:>9}",
        "level", "elements", "2M2", "minorant", "I_CEN_low", "marked"
    );
    for l in &result.levels {
        println!(
            "{:>5} {:>8} {:>12.5e} {:>12.5e} {:>9} {:>9}",
            l.level,
            l.elements,
            2.0 * l.majorant.total_m2,
            l.minorant,
            l.report
                .as_ref()
                .and_then(|r| r.i_cen_low)
                .map(|v| format!("{v:.5}"))
                .unwrap_or_else(|| "-".into()),
            l.marked
        );
    }
    println!("termination: {}", result.termination);
    println!("artifacts in {}", output.display());
    Ok(())
}

fn run_manufactured_cmd(output: &Path) -> Result<()> {
    let study = verify::manufactured_convergence(3)?;
    let mut csv = String::from("level,h,energy_error,newton_residual\n");
    println!("{:>5} {:>10} {:>13} {:>13}", "level", "h", "energy_err", "newton_res");
    for i in 0..study.mesh_sizes.len() {
        println!(
            "{:>5} {:>10.4e} {:>13.6e} {:>13.3e}",
            i, study.mesh_sizes[i], study.energy_errors[i], study.newton_residuals[i]
        );
        csv.push_str(&format!(
            "{},{:.6e},{:.6e},{:.6e}\n",
            i, study.mesh_sizes[i], study.energy_errors[i], study.newton_residuals[i]
        ));
    }
    println!("energy-error slope vs h: {:.4}", study.slope);
    std::fs::write(output.join("report.csv"), csv)?;
    Ok(())
}

fn run_collapse_cmd(output: &Path) -> Result<()> {
    let c = verify::linear_collapse_check(14)?;
    println!("quadratic test mode on {} elements", c.elements);
    println!("  D_F(v,.) compound {:.12e}  vs 0.5||v-u||^2 {:.12e}", c.df_primal_compound, c.df_primal_norm);
    println!("  D_F(u,.) compound {:.12e}  vs 0.5||div(y-p)||^2 {:.12e}", c.df_dual_compound, c.df_dual_norm);
    println!("  error identity residual (relative): {:.3e}", c.identity_residual_rel);
    println!("  equilibration defect: {:.3e}", c.max_div_defect);
    let csv = format!(
        "elements,df_primal_rel,df_dual_rel,identity_rel,div_defect\n{},{:.6e},{:.6e},{:.6e},{:.6e}\n",
        c.elements, c.df_primal_rel, c.df_dual_rel, c.identity_residual_rel, c.max_div_defect
    );
    std::fs::write(output.join("report.csv"), csv)?;
    Ok(())
}
