mod args;

use std::path::Path;
use std::process::ExitCode;

use clap::Parser;
use hint_core::em::ProgressEvent;
use hint_core::inference::{ContrastSpec, VarianceForm, VarianceMode, VarianceOptions};
use hint_core::pipeline::demo::{write_demo_dataset, DemoConfig};
use hint_core::pipeline::{resume_analysis, run_analysis, Analysis, RunHooks};
use hint_core::{ErrorClass, HintError, Result};
use serde_json::json;

use args::{Cli, Command, VarianceArgs};

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Usage => 2,
        ErrorClass::Data => 3,
        ErrorClass::Numerical => 4,
    }
}

fn fail(e: &HintError) -> ExitCode {
    let class = e.class();
    let body = json!({
        "error": e.tag(),
        "class": format!("{class:?}").to_lowercase(),
        "message": e.to_string(),
    });
    eprintln!("{body}");
    ExitCode::from(exit_code(class))
}

fn print_progress(e: &ProgressEvent) {
    eprintln!("iter={} dG={:.6e} dL={:.6e}", e.iteration, e.delta_global, e.delta_local);
}

fn summary(a: &Analysis, outputs: usize) -> serde_json::Value {
    json!({
        "analysis": a.layout.root,
        "iterations": a.state.iteration,
        "termination": a.state.termination.map(|t| t.as_str()),
        "outputs": outputs,
    })
}

fn variance(base: VarianceOptions, v: &VarianceArgs) -> Result<VarianceOptions> {
    let mut o = base;
    if let Some(m) = &v.variance_mode {
        o.mode = VarianceMode::parse(m).ok_or_else(|| HintError::InvalidArgument(format!("unknown variance mode {m:?}")))?;
    }
    if let Some(f) = &v.variance_form {
        o.form = VarianceForm::parse(f).ok_or_else(|| HintError::InvalidArgument(format!("unknown variance form {f:?}")))?;
    }
    Ok(o)
}

fn dir_check(dir: &Path) -> Result<()> {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(HintError::io(dir, std::io::Error::new(std::io::ErrorKind::NotFound, "analysis directory not found")))
    }
}

fn execute(cli: Cli) -> Result<serde_json::Value> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| HintError::InvalidArgument(format!("cannot size the thread pool: {e}")))?;
    }
    let mut progress = |e: &ProgressEvent| print_progress(e);
    let hooks = || RunHooks {
        progress: None,
        stop: None,
    };
    match cli.command {
        Command::Run(run) => {
            let cfg = run.to_config()?;
            let a = run_analysis(
                &cfg,
                RunHooks {
                    progress: Some(&mut progress),
                    ..hooks()
                },
            )?;
            let n = std::fs::read_dir(a.layout.map_dir()).map(|d| d.count()).unwrap_or(0);
            Ok(summary(&a, n))
        }
        Command::Resume { dir, snapshot, maxit } => {
            dir_check(&dir)?;
            let a = resume_analysis(
                &dir,
                snapshot.as_deref(),
                maxit,
                RunHooks {
                    progress: Some(&mut progress),
                    ..hooks()
                },
            )?;
            let n = std::fs::read_dir(a.layout.map_dir()).map(|d| d.count()).unwrap_or(0);
            Ok(summary(&a, n))
        }
        Command::Contrast {
            dir,
            lambda,
            name,
            variance: v,
        } => {
            dir_check(&dir)?;
            let a = Analysis::open(&dir)?;
            let spec = ContrastSpec::new(lambda, name);
            let (res, paths) = a.write_contrast(&spec, variance(a.config.variance, &v)?)?;
            Ok(json!({
                "analysis": a.layout.root,
                "contrast": spec,
                "varianceMode": res.mode.as_str(),
                "invalidVoxels": res.invalid.len(),
                "outputs": paths,
            }))
        }
        Command::Subpop { dir, x, name } => {
            dir_check(&dir)?;
            let a = Analysis::open(&dir)?;
            let paths = a.write_subpop(&x, &name)?;
            Ok(json!({ "analysis": a.layout.root, "x": x, "outputs": paths }))
        }
        Command::Export { dir } => {
            dir_check(&dir)?;
            let a = Analysis::open(&dir)?;
            let paths = a.write_default_maps()?;
            Ok(json!({ "analysis": a.layout.root, "outputs": paths }))
        }
        Command::Serve {
            dir,
            host,
            port,
            resume,
            maxit,
        } => {
            dir_check(&dir)?;
            let session = hint_service::Session::open(&dir)?;
            if resume {
                session
                    .start_live(maxit)
                    .map_err(|e| HintError::InvalidArgument(e.message))?;
            }
            let addr = format!("{host}:{port}")
                .parse()
                .map_err(|e| HintError::InvalidArgument(format!("bad address {host}:{port}: {e}")))?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| HintError::io(&dir, e))?;
            rt.block_on(hint_service::serve(session, addr)).map_err(|e| HintError::io(&dir, e))?;
            Ok(json!({ "served": dir }))
        }
        Command::Synth { dir, subjects, seed } => {
            let ds = write_demo_dataset(
                &dir,
                &DemoConfig {
                    n_subjects: subjects,
                    seed,
                    ..DemoConfig::default()
                },
            )?;
            Ok(json!({
                "dir": ds.dir,
                "mask": ds.mask,
                "covariates": ds.covariates,
                "subjects": ds.subjects.len(),
            }))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.render().to_string();
            return fail(&HintError::InvalidArgument(msg.trim().to_string()));
        }
    };
    match execute(cli) {
        Ok(out) => {
            println!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}
