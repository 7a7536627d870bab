//! The plant on its own: droop control sags the bus, and the secondary
//! layer restores it once activated, here fed ideal (exact average) estimates.

use jamsim::consensus::Estimate;
use jamsim::engine::SimTime;
use jamsim::scenario::preset;
use jamsim::powergrid::Plant;

fn main() {
    let cfg = preset("clean").expect("shipped preset");
    let mut plant = Plant::new(cfg.topology(), cfg.file.primary, cfg.file.secondary, cfg.load_profile()).expect("valid grid");
    let dt = cfg.plant_step.as_secs_f64();
    let n = plant.n_units();
    let mut t = SimTime::ZERO;
    let mut next_print = SimTime::ZERO;
    while t <= cfg.run_length {
        if t == cfg.activation {
            plant.enable_secondary();
        }
        let s = plant.state();
        let avg = Estimate::new(s.i_l.iter().sum::<f64>() / n as f64, s.v_dc.iter().sum::<f64>() / n as f64);
        let s = plant.step(t, &vec![avg; n], dt).expect("plant step");
        if t >= next_print {
            let v = s.v_dc.iter().sum::<f64>() / n as f64;
            println!("t = {:.2} s  mean bus voltage {v:.4} V  currents {:.3?}", t.as_secs_f64(), s.i_l);
            next_print += SimTime::from_millis(250);
        }
        t += cfg.plant_step;
    }
}
