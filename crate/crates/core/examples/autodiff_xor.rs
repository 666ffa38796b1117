//! Fit XOR with a two-layer network on the tape, then check its gradients
//! against central differences.

use mmchain::autodiff::{adam_step, AdamState, GradCheck, ParamStore, Session, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const INPUTS: [f64; 8] = [0., 0., 0., 1., 1., 0., 1., 1.];
const TARGETS: [usize; 4] = [0, 1, 1, 0];

fn loss(s: &mut Session) -> mmchain::Result<Var> {
    let x = s.constant(4, 2, INPUTS.to_vec())?;
    let (w1, b1, w2) = (s.param("w1")?, s.param("b1")?, s.param("w2")?);
    let h = s.matmul(x, w1)?;
    let h = s.add(h, b1)?;
    let h = s.tanh(h);
    let logits = s.matmul(h, w2)?;
    s.cross_entropy(logits, &TARGETS, &[false; 4])
}

fn main() -> mmchain::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut params = ParamStore::new();
    params.insert_uniform("w1", vec![2, 8], 1.0, &mut rng)?;
    params.insert_uniform("b1", vec![1, 8], 0.5, &mut rng)?;
    params.insert_uniform("w2", vec![8, 2], 1.0, &mut rng)?;

    let report = GradCheck::default().run(&params, loss)?;
    for t in &report.tensors {
        println!("{:>3}: max rel error {:.2e}", t.name, t.max_rel_error);
    }
    assert!(report.passed());

    let mut adam = AdamState::new(&params, 0.05);
    for step in 0..=300 {
        let (value, grads) = {
            let mut s = Session::new(&params);
            let l = loss(&mut s)?;
            (s.scalar(l), s.backward(l)?)
        };
        params.zero_grad();
        params.accumulate(&grads)?;
        adam_step(&mut params, &mut adam)?;
        if step % 50 == 0 {
            println!("step {step:>3}  loss {value:.5}");
        }
    }
    Ok(())
}
