use anyhow::Context;
use clap::Parser;
use mvtlex::cli::{self, Cli};
use mvtlex::par;

fn main() -> anyhow::Result<()> {
    let args = Cli::parse();
    let workers = cli::workers_from_env()?;
    par::with_workers(workers, || cli::execute(&args)).context("mvtlex failed")
}
