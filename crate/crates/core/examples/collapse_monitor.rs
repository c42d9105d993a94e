//! Feed synthetic KL streams to the collapse monitor.

use flownmt::harness::{CollapseMonitor, COLLAPSE_KL, COLLAPSE_PATIENCE};

fn main() {
    let anneal = 1000;
    let streams: [(&str, Vec<f64>); 3] = [
        ("vanishing", vec![0.0; 15]),
        ("held at C", vec![0.1; 15]),
        ("brief dip", [vec![0.2; 5], vec![0.001; 3], vec![0.2; 7]].concat()),
    ];
    println!("collapse: kl < {COLLAPSE_KL} for {COLLAPSE_PATIENCE} evals after step {anneal}");
    for (name, kls) in streams {
        let mut m = CollapseMonitor::new(anneal);
        for (i, kl) in kls.iter().enumerate() {
            m.observe(anneal + 200 * i, *kl);
        }
        println!("{name:<10} -> {:?}", m.status());
    }
}
