//! Fit a GP to noisy 1-D data, then compare fixed and optimized hyperparameters.
//!
//! ```text
//! cargo run --release --example fit_gp
//! ```

use gpcal::gp::{fit, nlml, optimize_hyper, predict, Hyperparams, OptimizerSettings, TrainingSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let truth = |x: f64| (1.5 * x).sin() + 0.3 * x;
    let inputs: Vec<Vec<f64>> = (0..25).map(|_| vec![rng.random_range(-3.0..3.0)]).collect();
    let targets = inputs.iter().map(|x| truth(x[0]) + 0.05 * rng.random_range(-1.0..1.0)).collect();
    let data = TrainingSet::new(inputs, targets)?;

    let init = Hyperparams::isotropic(0.3, 0.5, 0.2);
    let fitted = optimize_hyper(&data, &init, &OptimizerSettings::default())?;
    println!("initial   NLML {:8.3}  {init:?}", nlml(&data, &init)?.0);
    println!("optimized NLML {:8.3}  {:?}", fitted.nlml, fitted.hyper);

    let model = fit(&data, &fitted.hyper)?;
    println!("{:>6} {:>9} {:>9} {:>9}", "x", "truth", "mean", "2 std");
    for k in 0..=12 {
        let x = -3.0 + 0.5 * k as f64;
        let (m, v) = predict(&model, &[x])?;
        println!("{x:>6.2} {:>9.4} {m:>9.4} {:>9.4}", truth(x), 2.0 * v.sqrt());
    }
    Ok(())
}
