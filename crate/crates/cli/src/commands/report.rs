use std::path::PathBuf;

use clap::Args;
use serde_json::json;

use segloo_core::data_io::{encode_report, sha256_file, write_report};
use segloo_core::Result;

use super::evaluate::Evaluation;
use super::{output_dir, write_sidecar};
use crate::settings::Settings;
use crate::GlobalArgs;

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Evaluation written by `evaluate`, repeatable.
    #[arg(long = "eval")]
    evals: Vec<String>,
}

pub fn run(global: &GlobalArgs, args: ReportArgs) -> Result<()> {
    let mut s = Settings::load(global.config.as_deref(), "report")?;
    let out = output_dir(&s.pick("out", global.out.clone(), PathBuf::from("out"))?)?;
    let evals = s.pick_list("eval", args.evals, &[])?;
    let mut rows = Vec::with_capacity(evals.len());
    let mut inputs = Vec::with_capacity(evals.len());
    for e in &evals {
        let path = PathBuf::from(e);
        rows.push(Evaluation::load(&path)?.row);
        inputs.push(json!({"path": e, "sha256": sha256_file(&path)?}));
    }
    let path = out.join("report.csv");
    write_report(&path, &rows)?;
    write_sidecar(
        &path,
        &json!({"stage": "report", "settings": s.resolved(), "inputs": inputs}),
    )?;
    print!("{}", String::from_utf8_lossy(&encode_report(&rows)?));
    Ok(())
}
