//! Fits a flow policy to a two-mode chunk distribution and samples it back.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qchunk::nn::{Activation, Adam, Matrix, NetShape};
use qchunk::policy::{flow_bc_loss, standard_normal, FlowPolicy};

fn main() -> qchunk::Result<()> {
    let (dim, p_up, rows) = (4, 0.3, 256);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let shape = NetShape {
        width: 64,
        depth: 2,
        activation: Activation::Gelu,
    };
    let mut flow = FlowPolicy::new(1, dim, 10, &shape, &mut rng)?;
    let mut opt = Adam::new(flow.net().num_params(), 1e-3);
    let s = Matrix::filled(rows, 1, 1.0);
    for step in 0..=4000 {
        let mut a = standard_normal(rows, dim, &mut rng);
        for i in 0..rows {
            let c = if rng.random::<f64>() < p_up { 0.5 } else { -0.5 };
            a.row_mut(i).iter_mut().for_each(|v| *v = c + 0.05 * *v);
        }
        let l = flow_bc_loss(&flow, &s, &a, None, &mut rng)?;
        opt.step(flow.net_mut().params_mut(), &l.grads)?;
        if step % 1000 == 0 {
            println!("step {step:5}  flow loss {:.4}", l.loss);
        }
    }
    let samples = flow.sample(&Matrix::filled(2000, 1, 1.0), &mut rng)?;
    let up = samples.iter_rows().filter(|r| r.iter().sum::<f64>() > 0.0).count();
    println!("upper mode frequency {:.3} (data {p_up})", up as f64 / 2000.0);
    Ok(())
}
