//! Reverse-mode gradients of a small two-layer network checked against
//! finite differences.

use odorgraph::autodiff::{gradient_check, ParamStore, Tape, Tensor};

fn main() {
    let mut store = ParamStore::new();
    let w1 = store.add("w1", Tensor::new(3, 4, (0..12).map(|i| (i as f64 * 0.37).sin()).collect()));
    let w2 = store.add("w2", Tensor::new(4, 1, vec![0.5, -0.3, 0.8, 0.1]));
    let x = Tensor::new(5, 3, (0..15).map(|i| (i as f64 * 0.11).cos()).collect());

    let f = |t: &mut Tape, s: &ParamStore| {
        let xv = t.leaf(x.clone());
        let a = t.param(s, w1);
        let b = t.param(s, w2);
        let h = t.matmul(xv, a).unwrap();
        let h = t.relu(h);
        let y = t.matmul(h, b).unwrap();
        let y = t.square(y);
        t.mean(y)
    };
    let err = gradient_check(&mut store, &f, 1e-5, 1e-4);
    println!("max relative error {err:.2e}");
    assert!(err < 1e-5);
}
