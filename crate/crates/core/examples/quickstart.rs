//! Simulate an OU path, tabulate the δ limit law and run one test.
//!
//!     cargo run --release -p shiftcvm-core --example quickstart

use shiftcvm::{
    cvm_lte, decide, estimate_quantiles, simulate_limit, simulate_path, InitRule, InvariantLaw,
    LimitGrid, LimitKind, Noise, ShiftDriftModel, TimeGrid,
};

fn main() -> shiftcvm::Result<()> {
    let model = ShiftDriftModel::ou(1.0)?;
    let law = InvariantLaw::build_default(&model)?;
    let path = simulate_path(
        &model,
        0.5,
        TimeGrid::new(200.0, 0.01)?,
        Noise::Seeded(3),
        InitRule::Stationary(&law),
    )?;
    let batch = simulate_limit(LimitKind::Delta, &law, 100_000, 1, LimitGrid::for_law(&law))?;
    let table = estimate_quantiles(&batch, &[0.05])?;
    let report = decide(&cvm_lte(&path, &model, &law)?, &table, 0.05)?;
    println!("{}", report.to_json());
    Ok(())
}
