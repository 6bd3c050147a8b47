//! Builds a small graph by hand on the tape, runs backward, and checks one
//! input gradient against a central difference.

use euisnet::tape::NormStats;
use euisnet::{Shape, Tape, Tensor};

fn loss(x: &Tensor<f64>, w: &Tensor<f64>, record: bool) -> euisnet::Result<(f64, Option<Tensor<f64>>)> {
    let mut tape = Tape::new();
    let xv = tape.variable(x.clone());
    let wv = tape.constant(w.clone());
    let y = tape.conv2d(xv, wv, None)?;
    let gamma = tape.constant(Tensor::ones(Shape::new(1, 2, 1, 1)));
    let beta = tape.constant(Tensor::zeros(Shape::new(1, 2, 1, 1)));
    let (y, _) = tape.batch_norm(y, gamma, beta, NormStats::Batch, 1e-5)?;
    let y = tape.sigmoid(y);
    let y = tape.max_pool2(y);
    let l = tape.mean(y);
    let value = tape.value(l).to_scalar()?;
    if !record {
        return Ok((value, None));
    }
    let grads = tape.backward(l)?;
    Ok((value, grads.wrt(xv).cloned()))
}

fn main() -> euisnet::Result<()> {
    let x = Tensor::from_fn(Shape::new(2, 1, 6, 6), |n, _, h, w| {
        ((n * 31 + h * 7 + w * 5) % 11) as f64 / 10.0 - 0.5
    });
    let w = Tensor::from_fn(Shape::new(2, 1, 3, 3), |o, _, kh, kw| {
        ((o + 2 * kh + kw) % 5) as f64 / 4.0 - 0.5
    });
    let (value, grad) = loss(&x, &w, true)?;
    let grad = grad.expect("input gradient");
    println!("loss {value:.6}");

    let eps = 1e-5;
    for idx in [0, 9, 40] {
        let mut plus = x.clone();
        plus.data_mut()[idx] += eps;
        let mut minus = x.clone();
        minus.data_mut()[idx] -= eps;
        let numeric = (loss(&plus, &w, false)?.0 - loss(&minus, &w, false)?.0) / (2.0 * eps);
        println!(
            "d loss / d x[{idx}]: analytic {:.8e}  numeric {numeric:.8e}",
            grad.data()[idx]
        );
    }
    Ok(())
}
