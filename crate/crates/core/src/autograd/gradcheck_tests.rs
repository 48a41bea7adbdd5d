//! Every primitive's backward pass against central finite differences.

use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-3;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.5..1.5)).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

/// Reduces `out` to a scalar with fixed random weights so that no gradient is trivially zero.
fn project(t: &mut Tape, out: Var, seed: u64) -> Var {
    let shape = t.value(out).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random(&mut rng, shape[0], shape[1]);
    let w = t.constant(w);
    let prod = t.mul(out, w).unwrap();
    t.sum(prod)
}

fn check<F>(name: &str, store: &mut ParamStore, f: F)
where
    F: Fn(&mut Tape, &ParamStore) -> Var,
{
    store.zero_grad();
    let mut tape = Tape::new();
    let loss = f(&mut tape, store);
    tape.backward(loss, store).unwrap();

    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let analytic = store.get(id).grad.clone().unwrap();
        for k in 0..store.value(id).numel() {
            let orig = store.value(id).data()[k];
            store.get_mut(id).value.data_mut()[k] = orig + H;
            let plus = {
                let mut t = Tape::new();
                let l = f(&mut t, store);
                t.value(l).item()
            };
            store.get_mut(id).value.data_mut()[k] = orig - H;
            let minus = {
                let mut t = Tape::new();
                let l = f(&mut t, store);
                t.value(l).item()
            };
            store.get_mut(id).value.data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * H);
            let a = analytic.data()[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            assert!(rel < TOL, "{name}: `{}`[{k}] analytic {a} vs numeric {numeric}", store.get(id).name);
        }
    }
}

fn two(seed: u64, a: (usize, usize), b: (usize, usize)) -> (ParamStore, ParamId, ParamId) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    let x = s.add("a", random(&mut rng, a.0, a.1));
    let y = s.add("b", random(&mut rng, b.0, b.1));
    (s, x, y)
}

#[test]
fn matmul_and_transposes() {
    let (mut s, a, b) = two(1, (3, 4), (4, 2));
    check("matmul", &mut s, |t, s| {
        let (x, y) = (t.param(s, a), t.param(s, b));
        let o = t.matmul(x, y).unwrap();
        project(t, o, 10)
    });
    let (mut s, a, b) = two(2, (3, 4), (5, 4));
    check("matmul_nt", &mut s, |t, s| {
        let (x, y) = (t.param(s, a), t.param(s, b));
        let o = t.matmul_nt(x, y).unwrap();
        project(t, o, 11)
    });
    let (mut s, a, _) = two(3, (3, 4), (1, 1));
    check("transpose", &mut s, |t, s| {
        let x = t.param(s, a);
        let o = t.transpose(x).unwrap();
        project(t, o, 12)
    });
}

#[test]
fn elementwise_binary() {
    let (mut s, a, b) = two(4, (2, 3), (2, 3));
    check("add/sub/mul", &mut s, |t, s| {
        let (x, y) = (t.param(s, a), t.param(s, b));
        let p = t.add(x, y).unwrap();
        let q = t.sub(p, y).unwrap();
        let r = t.mul(q, y).unwrap();
        let r = t.scale(r, -0.7);
        project(t, r, 13)
    });
    let (mut s, a, b) = two(5, (3, 4), (1, 4));
    check("add_row/mul_row", &mut s, |t, s| {
        let (x, r) = (t.param(s, a), t.param(s, b));
        let p = t.mul_row(x, r).unwrap();
        let q = t.add_row(p, r).unwrap();
        project(t, q, 14)
    });
}

#[test]
fn structural_ops() {
    let (mut s, a, b) = two(6, (3, 2), (3, 3));
    check("concat/slice/row", &mut s, |t, s| {
        let (x, y) = (t.param(s, a), t.param(s, b));
        let c = t.concat_cols(&[x, y, x]).unwrap();
        let sl = t.slice_cols(c, 1, 4).unwrap();
        let r = t.row(sl, 2).unwrap();
        let m = t.mean_rows(sl).unwrap();
        let both = t.concat_cols(&[r, m]).unwrap();
        project(t, both, 15)
    });
}

#[test]
fn activations() {
    let (mut s, a, _) = two(7, (3, 5), (1, 1));
    check("relu/tanh/sigmoid", &mut s, |t, s| {
        let x = t.param(s, a);
        let r = t.relu(x);
        let th = t.tanh(x);
        let sg = t.sigmoid(x);
        let c = t.concat_cols(&[r, th, sg]).unwrap();
        project(t, c, 16)
    });
}

#[test]
fn softmax_and_layer_norm() {
    let (mut s, a, _) = two(8, (3, 5), (1, 1));
    check("softmax", &mut s, |t, s| {
        let x = t.param(s, a);
        let o = t.softmax(x).unwrap();
        project(t, o, 17)
    });
    check("layer_norm", &mut s, |t, s| {
        let x = t.param(s, a);
        let o = t.layer_norm(x, 1e-5).unwrap();
        project(t, o, 18)
    });
}

#[test]
fn losses() {
    let (mut s, a, b) = two(9, (1, 4), (1, 4));
    check("mse", &mut s, |t, s| {
        let (x, y) = (t.param(s, a), t.param(s, b));
        t.mse(x, y).unwrap()
    });
    check("squared_error", &mut s, |t, s| {
        let (x, y) = (t.param(s, a), t.param(s, b));
        t.squared_error(x, y).unwrap()
    });
    check("cross_entropy", &mut s, |t, s| {
        let x = t.param(s, a);
        t.cross_entropy(x, 2).unwrap()
    });
}

#[test]
fn gather() {
    let (mut s, table, _) = two(10, (4, 3), (1, 1));
    check("gather_rows", &mut s, |t, s| {
        let rows = [RowSource::Table(2), RowSource::Fixed(vec![0.1, 0.2, 0.3]), RowSource::Table(0), RowSource::Table(2)];
        let g = t.gather_rows(s, table, &rows).unwrap();
        project(t, g, 19)
    });
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for n in 1..20 {
        let mut t = Tape::new();
        let x = t.constant(random(&mut rng, 3, n));
        let y = t.softmax(x).unwrap();
        for row in t.value(y).data().chunks(n) {
            assert!(row.iter().all(|v| *v >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn layer_norm_rows_are_standardized() {
    let mut rng = ChaCha8Rng::seed_from_u64(78);
    for n in 2..20 {
        let mut t = Tape::new();
        let x = t.constant(random(&mut rng, 4, n));
        let y = t.layer_norm(x, 1e-12).unwrap();
        for row in t.value(y).data().chunks(n) {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }
}
