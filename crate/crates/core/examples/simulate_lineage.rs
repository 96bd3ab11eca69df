//! Simulate one lineage, print generation sizes, and write it as JSON lines.
//!
//!     cargo run --example simulate_lineage -- 10 1

use gwbar::model::mean_offspring;
use gwbar::simulate::{simulate, stationary_matched_law, SimulationSpec};
use gwbar::{ModelKappa, ModelTheta};

fn main() -> gwbar::Result<()> {
    let mut args = std::env::args().skip(1);
    let gens: usize = args.next().map_or(10, |s| s.parse().expect("generations"));
    let seed: u64 = args.next().map_or(1, |s| s.parse().expect("seed"));

    let theta = ModelTheta {
        alpha0: 0.5,
        beta0: 1.0,
        alpha1: -0.3,
        beta1: 2.0,
        alpha0p: 0.4,
        beta0p: 0.5,
        alpha1p: -0.2,
        beta1p: 1.5,
        p10: 0.5,
        p0: 0.2,
        p1: 0.2,
    };
    let kappa = ModelKappa {
        sigma: 1.0,
        rho: 0.3,
        sigma0: 1.0,
        sigma1: 1.0,
    };
    let spec = SimulationSpec {
        max_generation: gens,
        seed,
        initial: stationary_matched_law(&theta, &kappa)?,
    };
    let tree = simulate(&spec, &theta, &kappa)?;

    let m = mean_offspring(&theta);
    println!("m = {m}");
    println!("{:>4} {:>8} {:>10} {:>10}", "q", "|G*_q|", "m^q", "mean X");
    for q in 0..=gens {
        let cells = tree.generation(q);
        if cells.is_empty() {
            println!("lineage extinct at generation {q}");
            break;
        }
        let mean = cells.iter().map(|&(_, x)| x).sum::<f64>() / cells.len() as f64;
        println!(
            "{q:>4} {:>8} {:>10.2} {mean:>10.4}",
            cells.len(),
            m.powi(q as i32)
        );
    }

    let path = std::env::temp_dir().join(format!("gwbar-lineage-{seed}.jsonl"));
    tree.write_jsonl(std::io::BufWriter::new(std::fs::File::create(&path)?))?;
    println!("wrote {} cells to {}", tree.len(), path.display());
    Ok(())
}
