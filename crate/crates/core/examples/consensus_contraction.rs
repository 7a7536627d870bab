//! Lossless full-mesh averaging: the disagreement shrinks by 1 - N·ε per
//! step and every agent ends at the initial mean.

use jamsim::consensus::{ConsensusLayer, Estimate, Injection};

fn main() {
    let (n, eps) = (6, 0.025);
    let measurements: Vec<Estimate> = (0..n).map(|i| Estimate::new(2.0 + i as f64, 46.5 + 0.4 * i as f64)).collect();
    let mut layer = ConsensusLayer::full_mesh(n, eps, Injection::PerPeriod);
    let mut prev: Option<f64> = None;
    println!("step  voltage spread  ratio");
    for k in 0..40u64 {
        let updates = layer.generate_all(&measurements, k);
        for u in &updates {
            for r in (0..n).filter(|r| *r != u.sender) {
                layer.agent_mut(r).receive(u);
            }
        }
        layer.step_all(k);
        let d = layer.disagreement().voltage;
        if k % 5 == 0 {
            let ratio = prev.map_or(String::from("-"), |p| format!("{:.6}", d / p));
            println!("{k:>4}  {d:>14.9}  {ratio}");
        }
        prev = Some(d);
    }
    let mean = measurements.iter().map(|m| m.voltage).sum::<f64>() / n as f64;
    println!("expected ratio {:.2}, initial mean {mean:.6} V", 1.0 - n as f64 * eps);
    for (i, x) in layer.states().iter().enumerate() {
        println!("agent {}: {:.6} V, {:.6} A", i + 1, x.voltage, x.current);
    }
}
