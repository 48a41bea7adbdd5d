use super::*;
use crate::data::{Detection, Position};
use crate::encoding::Vocabulary;

fn scan(dets: &[(&str, f64)]) -> Scan {
    Scan::new("t", Position::new(0.0, 0.0), dets.iter().map(|(b, r)| Detection::new(b, *r)).collect())
}

fn bssids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("aa:00:00:00:{:02x}:{:02x}", i >> 8, i & 0xff)).collect()
}

fn encoder(n: usize) -> Encoder {
    let names = bssids(n);
    let dets: Vec<(&str, f64)> = names.iter().map(|b| (b.as_str(), -60.0)).collect();
    Encoder::new(Vocabulary::build(&[scan(&dets)]).unwrap(), DEFAULT_DIM, 7)
}

const DEFAULT_DIM: usize = 16;

fn sample_scan(n: usize, offset: usize) -> Scan {
    let names = bssids(n + offset);
    let dets: Vec<(&str, f64)> =
        names[offset..].iter().enumerate().map(|(i, b)| (b.as_str(), -40.0 - ((i * 37) % 55) as f64)).collect();
    scan(&dets)
}

fn value(m: &Model, name: &str) -> Tensor {
    m.params().value(m.params().find(name).unwrap_or_else(|| panic!("no param {name}"))).clone()
}

fn set_value(m: &mut Model, name: &str, f: impl Fn(usize) -> f64) {
    let id = m.params().find(name).unwrap();
    for (i, v) in m.params_mut().get_mut(id).value.data_mut().iter_mut().enumerate() {
        *v = f(i);
    }
}

// plain-loop reference algebra, independent of the tape

fn affine(x: &[f64], w: &Tensor, b: &Tensor) -> Vec<f64> {
    let (rows, cols) = (w.rows(), w.cols());
    assert_eq!(x.len(), rows);
    (0..cols).map(|j| b.data()[j] + (0..rows).map(|i| x[i] * w.get(i, j)).sum::<f64>()).collect()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn rows_of(m: &Model, enc: &Encoder, s: &Scan) -> Vec<Vec<f64>> {
    let ModelInput::Set(set) = m.prepare(enc, s).unwrap() else { panic!("expected set") };
    let t = set.materialize(m.embedding().unwrap()).unwrap().rows;
    (0..t.rows()).map(|r| t.row_slice(r).to_vec()).collect()
}

fn predict(m: &Model, enc: &Encoder, s: &Scan) -> Prediction {
    m.predict(&m.prepare(enc, s).unwrap()).unwrap()
}

fn close(a: (f64, f64), b: &[f64], tol: f64) {
    assert!((a.0 - b[0]).abs() < tol && (a.1 - b[1]).abs() < tol, "{a:?} vs {b:?}");
}

#[test]
fn zeroed_weights_give_the_output_bias() {
    let enc = encoder(20);
    for arch in Arch::ALL {
        let mut m = Model::new(ModelConfig::new(arch), 20, 1).unwrap();
        for p in m.params_mut().iter_mut() {
            p.value.data_mut().fill(0.0);
        }
        let p = predict(&m, &enc, &sample_scan(5, 0));
        assert_eq!(p.position_norm, (0.0, 0.0), "{arch}");
    }
}

#[test]
fn mlp_matches_matrix_reference() {
    let enc = encoder(20);
    let m = Model::new(ModelConfig::new(Arch::Mlp), 20, 3).unwrap();
    let s = sample_scan(7, 4);
    let x: Vec<f64> = enc.encode_fixed_vector(&s).into_iter().map(normalize_rssi).collect();
    let h1: Vec<f64> = affine(&x, &value(&m, "mlp.l1.w"), &value(&m, "mlp.l1.b")).into_iter().map(|v| v.max(0.0)).collect();
    let h2: Vec<f64> = affine(&h1, &value(&m, "mlp.l2.w"), &value(&m, "mlp.l2.b")).into_iter().map(|v| v.max(0.0)).collect();
    let y = affine(&h2, &value(&m, "mlp.l3.w"), &value(&m, "mlp.l3.b"));
    close(predict(&m, &enc, &s).position_norm, &y, 1e-12);
}

#[test]
fn mlp_rejects_wrong_length() {
    let m = Model::new(ModelConfig::new(Arch::Mlp), 20, 3).unwrap();
    let err = m.predict(&ModelInput::Fixed(vec![0.5; 19])).unwrap_err();
    assert!(matches!(err, Error::Shape { .. }), "{err}");
}

#[test]
fn rnn_matches_unrolled_reference() {
    let enc = encoder(20);
    let m = Model::new(ModelConfig::new(Arch::Rnn), 20, 5).unwrap();
    let s = sample_scan(6, 2);
    let (w, u, b) = (value(&m, "rnn.w_in"), value(&m, "rnn.w_hidden"), value(&m, "rnn.bias"));
    let mut h = vec![0.0; m.config().hidden];
    for row in rows_of(&m, &enc, &s) {
        let zero = Tensor::zeros(&[1, h.len()]);
        h = add(&affine(&row, &w, &b), &affine(&h, &u, &zero)).into_iter().map(f64::tanh).collect();
    }
    let y = affine(&h, &value(&m, "rnn.out.w"), &value(&m, "rnn.out.b"));
    close(predict(&m, &enc, &s).position_norm, &y, 1e-12);
}

#[test]
fn rnn_and_lstm_consume_rows_strongest_first() {
    let enc = encoder(20);
    let m = Model::new(ModelConfig::new(Arch::Lstm), 20, 5).unwrap();
    let s = sample_scan(6, 2);
    let rows = rows_of(&m, &enc, &s);
    let rssi: Vec<f64> = rows.iter().map(|r| *r.last().unwrap()).collect();
    assert!(rssi.windows(2).all(|w| w[0] >= w[1]), "{rssi:?}");
}

fn lstm_reference(m: &Model, rows: &[Vec<f64>]) -> Vec<f64> {
    let h_dim = m.config().hidden;
    let (w, u, b) = (value(m, "lstm.w_in"), value(m, "lstm.w_hidden"), value(m, "lstm.bias"));
    let zero = Tensor::zeros(&[1, 4 * h_dim]);
    let mut h = vec![0.0; h_dim];
    let mut c = vec![0.0; h_dim];
    for row in rows {
        let z = add(&affine(row, &w, &b), &affine(&h, &u, &zero));
        for k in 0..h_dim {
            let (i, f, g, o) = (sig(z[k]), sig(z[h_dim + k]), z[2 * h_dim + k].tanh(), sig(z[3 * h_dim + k]));
            c[k] = f * c[k] + i * g;
            h[k] = o * c[k].tanh();
        }
    }
    affine(&h, &value(m, "lstm.out.w"), &value(m, "lstm.out.b"))
}

#[test]
fn lstm_matches_cell_reference() {
    let enc = encoder(20);
    let m = Model::new(ModelConfig::new(Arch::Lstm), 20, 8).unwrap();
    for n in [1, 2, 9] {
        let s = sample_scan(n, 1);
        let y = lstm_reference(&m, &rows_of(&m, &enc, &s));
        close(predict(&m, &enc, &s).position_norm, &y, 1e-12);
    }
}

#[test]
fn lstm_with_closed_input_gate_outputs_its_bias() {
    let enc = encoder(20);
    let mut m = Model::new(ModelConfig::new(Arch::Lstm), 20, 8).unwrap();
    let h = m.config().hidden;
    set_value(&mut m, "lstm.w_in", |i| if (i % (4 * h)) < h { 0.0 } else { 0.3 });
    set_value(&mut m, "lstm.w_hidden", |i| if (i % (4 * h)) < h { 0.0 } else { 0.3 });
    set_value(&mut m, "lstm.bias", |i| if i < h { -1e3 } else { 0.0 });
    let p = predict(&m, &enc, &sample_scan(5, 0));
    let b = value(&m, "lstm.out.b");
    close(p.position_norm, b.data(), 1e-12);
}

#[test]
fn attention_singleton_pools_the_row_itself() {
    let enc = encoder(20);
    let m = Model::new(ModelConfig::new(Arch::Attention).with_classes(3), 20, 2).unwrap();
    let s = sample_scan(1, 3);
    let z = rows_of(&m, &enc, &s).remove(0);
    // classifier reads the pooled vector directly
    let logits = affine(&z, &value(&m, "classifier.w"), &value(&m, "classifier.b"));
    let got = predict(&m, &enc, &s).class_logits.unwrap();
    for (a, b) in got.iter().zip(&logits) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn attention_over_identical_rows_equals_one_row() {
    let enc = encoder(20);
    let m = Model::new(ModelConfig::new(Arch::Attention), 20, 2).unwrap();
    let name = bssids(1)[0].clone();
    let name = name.as_str();
    let once = predict(&m, &enc, &scan(&[(name, -55.0)]));
    let many = predict(&m, &enc, &scan(&[(name, -55.0); 6]));
    close(once.position_norm, &[many.position_norm.0, many.position_norm.1], 1e-12);
}

fn permuted(s: &Scan, seed: u64) -> Scan {
    use rand::seq::SliceRandom;
    let mut out = s.clone();
    out.detections.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    out
}

#[test]
fn set_models_ignore_detection_order() {
    let enc = encoder(40);
    for arch in [Arch::Attention, Arch::SetTransformer] {
        let m = Model::new(ModelConfig::new(arch).with_classes(4), 40, 11).unwrap();
        for n in [2, 5, 17, 40] {
            let s = sample_scan(n, 0);
            let base = predict(&m, &enc, &s);
            for k in 0..5 {
                let p = predict(&m, &enc, &permuted(&s, k));
                close(p.position_norm, &[base.position_norm.0, base.position_norm.1], 1e-5);
                let (a, b) = (p.class_logits.unwrap(), base.class_logits.clone().unwrap());
                assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-5), "{arch} n={n}");
            }
        }
    }
}

#[test]
fn set_transformer_sees_multiplicity() {
    let enc = encoder(20);
    let m = Model::new(ModelConfig::new(Arch::SetTransformer), 20, 4).unwrap();
    let names = bssids(2);
    let one = predict(&m, &enc, &scan(&[(&names[0], -50.0), (&names[1], -80.0)]));
    let two = predict(&m, &enc, &scan(&[(&names[0], -50.0), (&names[0], -50.0), (&names[1], -80.0)]));
    assert_ne!(one.position_norm, two.position_norm);
}

#[test]
fn zero_classifier_gives_uniform_logits() {
    let enc = encoder(20);
    for arch in Arch::ALL {
        let mut m = Model::new(ModelConfig::new(arch).with_classes(3), 20, 6).unwrap();
        set_value(&mut m, "classifier.w", |_| 0.0);
        set_value(&mut m, "classifier.b", |_| 0.0);
        let logits = predict(&m, &enc, &sample_scan(4, 0)).class_logits.unwrap();
        assert_eq!(logits, vec![0.0; 3], "{arch}");
    }
}

#[test]
fn predicted_class_is_the_argmax_of_an_affine_readout() {
    let enc = encoder(20);
    let m = Model::new(ModelConfig::new(Arch::Mlp).with_classes(3), 20, 6).unwrap();
    for k in 0..10 {
        let s = sample_scan(3 + k, k);
        let x: Vec<f64> = enc.encode_fixed_vector(&s).into_iter().map(normalize_rssi).collect();
        let h1: Vec<f64> = affine(&x, &value(&m, "mlp.l1.w"), &value(&m, "mlp.l1.b")).into_iter().map(|v| v.max(0.0)).collect();
        let h2: Vec<f64> = affine(&h1, &value(&m, "mlp.l2.w"), &value(&m, "mlp.l2.b")).into_iter().map(|v| v.max(0.0)).collect();
        let logits = affine(&h2, &value(&m, "classifier.w"), &value(&m, "classifier.b"));
        let best = (0..3).max_by(|&a, &b| logits[a].total_cmp(&logits[b])).unwrap();
        let p = predict(&m, &enc, &s);
        assert_eq!(p.class_logits.as_ref().unwrap().len(), 3);
        assert_eq!(p.predicted_class(), Some(best));
    }
}

#[test]
fn outputs_stay_finite_for_any_cardinality() {
    let enc = encoder(200);
    for arch in Arch::ALL {
        let m = Model::new(ModelConfig::new(arch).with_classes(2), 200, 9).unwrap();
        for n in [1, 2, 3, 50, 200] {
            let p = predict(&m, &enc, &sample_scan(n, 0));
            assert!(p.position_norm.0.is_finite() && p.position_norm.1.is_finite(), "{arch} n={n}");
            assert!(p.class_logits.unwrap().iter().all(|v| v.is_finite()));
        }
    }
}

#[test]
fn empty_scan_is_an_error_for_set_models() {
    let enc = encoder(20);
    let empty = scan(&[]);
    for arch in [Arch::Rnn, Arch::Lstm, Arch::Attention, Arch::SetTransformer] {
        let m = Model::new(ModelConfig::new(arch), 20, 1).unwrap();
        assert!(m.prepare(&enc, &empty).is_err());
        let input = ModelInput::Set(SetInput { rows: vec![], rssi: vec![] });
        assert!(matches!(m.predict(&input), Err(Error::Empty(_))), "{arch}");
    }
}

#[test]
fn every_parameter_receives_gradient() {
    let enc = encoder(20);
    // every vocabulary entry heard so every embedding row is touched
    let s = sample_scan(20, 0);
    for arch in Arch::ALL {
        let mut m = Model::new(ModelConfig::new(arch).with_classes(3), 20, 12).unwrap();
        let input = m.prepare(&enc, &s).unwrap();
        let mut t = Tape::new();
        let out = m.forward(&mut t, &input).unwrap();
        let target = t.constant(Tensor::row(vec![0.3, -0.2]));
        let reg = t.squared_error(out.position, target).unwrap();
        let ce = t.cross_entropy(out.logits.unwrap(), 1).unwrap();
        let loss = t.add(reg, ce).unwrap();
        m.params_mut().zero_grad();
        t.backward(loss, m.params_mut()).unwrap();
        for p in m.params().iter() {
            let g = p.grad.as_ref().unwrap();
            assert!(g.data().iter().any(|v| *v != 0.0), "{arch}: {} got no gradient", p.name);
        }
    }
}

#[test]
fn default_widths_keep_parameter_counts_within_a_quarter() {
    // embeddings are excluded; the MLP's input layer is sized for 20 access points
    let counts: Vec<(Arch, usize)> = Arch::ALL
        .into_iter()
        .map(|a| {
            let m = Model::new(ModelConfig::new(a), 20, 0).unwrap();
            let emb = m.embedding().map_or(0, Tensor::numel);
            (a, m.num_params() - emb)
        })
        .collect();
    for &(a, ca) in &counts {
        for &(b, cb) in &counts {
            let diff = (ca as f64 - cb as f64).abs() / ca.max(cb) as f64;
            assert!(diff <= 0.25, "{a}={ca} vs {b}={cb}");
        }
    }
}

#[test]
fn construction_is_seeded() {
    let a = Model::new(ModelConfig::new(Arch::SetTransformer), 20, 42).unwrap();
    let b = Model::new(ModelConfig::new(Arch::SetTransformer), 20, 42).unwrap();
    let c = Model::new(ModelConfig::new(Arch::SetTransformer), 20, 43).unwrap();
    assert_eq!(a.params().snapshot(), b.params().snapshot());
    assert_ne!(a.params().snapshot(), c.params().snapshot());
}

#[test]
fn arrays_reload_only_into_a_matching_model() {
    let a = Model::new(ModelConfig::new(Arch::Lstm), 20, 1).unwrap();
    let mut b = Model::new(ModelConfig::new(Arch::Lstm), 20, 2).unwrap();
    b.load_arrays(a.named_arrays()).unwrap();
    assert_eq!(a.params().snapshot(), b.params().snapshot());
    let mut rnn = Model::new(ModelConfig::new(Arch::Rnn), 20, 1).unwrap();
    assert!(matches!(rnn.load_arrays(a.named_arrays()), Err(Error::Checkpoint(_))));
    let mut wider = Model::new(ModelConfig::new(Arch::Lstm), 21, 1).unwrap();
    assert!(matches!(wider.load_arrays(a.named_arrays()), Err(Error::Checkpoint(_))));
}
