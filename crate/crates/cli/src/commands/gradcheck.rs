use std::fmt::Write as _;

use trialign::ag::{check_catalog, GradCheckOptions, GradCheckReport};
use trialign::training::check_encode_loss;

use super::{create_dir, write_out};
use crate::error::{CliError, CliResult};
use crate::GradCheckArgs;

pub fn grad_check(a: GradCheckArgs, seed: Option<u64>) -> CliResult<()> {
    let seed = seed.unwrap_or(0);
    let opts = GradCheckOptions::default();
    let mut checks: Vec<(String, GradCheckReport)> =
        check_catalog(seed, &opts).map_err(CliError::data)?.into_iter().map(|c| (c.label, c.report)).collect();
    checks.push(("encode+loss".into(), check_encode_loss(seed, &opts)?));

    let mut csv = String::from("check,param,checked,skipped_kinks,max_rel_error,passed\n");
    let mut failed = Vec::new();
    for (label, report) in &checks {
        let status = if report.passed() { "ok" } else { "FAIL" };
        println!("{status:>4}  {label:<24} max rel error {:.3e}", report.max_rel_error());
        if !report.deterministic {
            println!("      evaluations at the same point disagreed");
        }
        for p in &report.params {
            writeln!(csv, "{label},{},{},{},{},{}", p.name, p.checked, p.skipped_kinks, p.max_rel_error, p.passed)
                .unwrap();
            if !p.passed {
                println!("      {} failed: {:.3e} > {:.0e}", p.name, p.max_rel_error, report.tol);
            }
        }
        if !report.passed() {
            failed.push(label.as_str());
        }
    }
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        write_out(dir, "gradcheck.csv", csv)?;
    }
    if failed.is_empty() {
        println!("all {} checks passed (tolerance {:.0e})", checks.len(), opts.tol);
        Ok(())
    } else {
        Err(CliError::Numeric(format!("gradient check failed for: {}", failed.join(", "))))
    }
}
