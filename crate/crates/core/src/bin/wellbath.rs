use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use wellbath::cli::{load_config_file, run, RunError};

/// Master-equation scenarios for a double well coupled to a thermal bath.
///
/// Values are taken from the defaults, then `--config`, then the flags.
#[derive(Parser, Debug)]
#[command(name = "wellbath", version)]
struct Args {
    /// fig1, fig2, fermi, bias, pair_x33, pair_ef, collision_demo, sweep or rates
    #[arg(long)]
    scenario: Option<String>,
    /// `key = value` file
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    temperature: Option<String>,
    /// Target ⟨Γ⟩/⟨g⟩
    #[arg(long)]
    q_ratio: Option<String>,
    /// Bath coupling q, instead of --q-ratio
    #[arg(long)]
    coupling_q: Option<String>,
    /// Side-sensing parameter in [-1, 1]
    #[arg(long)]
    b: Option<String>,
    #[arg(long)]
    levels: Option<String>,
    #[arg(long)]
    t_max: Option<String>,
    /// Fixed step for rk4, expm_midpoint and split
    #[arg(long)]
    dt: Option<String>,
    #[arg(long)]
    rel_tol: Option<String>,
    /// auto, rosenbrock, dopri, rk4, expm, expm_midpoint or split
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    samples: Option<String>,
    /// phi_plus, phi_minus, psi_plus or psi_minus
    #[arg(long)]
    bell: Option<String>,
    #[arg(long)]
    bias_amplitude: Option<String>,
    #[arg(long)]
    bias_span: Option<String>,
    /// Mean particle number of the fermion ensemble
    #[arg(long)]
    particles: Option<String>,
    /// Comma-separated Q values
    #[arg(long)]
    q_grid: Option<String>,
    /// Comma-separated b values for sweep
    #[arg(long)]
    b_grid: Option<String>,
    /// Output directory
    #[arg(long)]
    out: Option<String>,
}

impl Args {
    fn flags(&self) -> Vec<(String, String)> {
        let fields = [
            ("scenario", &self.scenario),
            ("temperature", &self.temperature),
            ("q_ratio", &self.q_ratio),
            ("coupling_q", &self.coupling_q),
            ("b", &self.b),
            ("levels", &self.levels),
            ("t_max", &self.t_max),
            ("dt", &self.dt),
            ("rel_tol", &self.rel_tol),
            ("method", &self.method),
            ("samples", &self.samples),
            ("bell", &self.bell),
            ("bias_amplitude", &self.bias_amplitude),
            ("bias_span", &self.bias_span),
            ("particles", &self.particles),
            ("q_grid", &self.q_grid),
            ("b_grid", &self.b_grid),
            ("out", &self.out),
        ];
        fields.into_iter().filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone()))).collect()
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    let result = load_config_file(args.config.as_deref(), &args.flags()).map_err(RunError::from).and_then(|cfg| run(&cfg));
    match result {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
