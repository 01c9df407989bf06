use proptest::prelude::*;
use proxyrca::rng::stream;
use proxyrca::scorer::{lip_loss, score_inner_product, CrossAttentionScorer};
use proxyrca::tensor::{Graph, ParamStore, Tensor};
use rand::Rng;

fn random(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
}

fn lip(scores: &[f64], t: Option<f64>) -> f64 {
    let mut g = Graph::new();
    let y = g.constant(Tensor::row_vector(scores.to_vec())).unwrap();
    let l = lip_loss(&mut g, y, t).unwrap();
    g.value(l).item()
}

fn ip(u: &Tensor, c: &Tensor, t: Option<f64>) -> Vec<f64> {
    let mut g = Graph::new();
    let (u, c) = (g.constant(u.clone()).unwrap(), g.constant(c.clone()).unwrap());
    let y = score_inner_product(&mut g, u, c, t).unwrap();
    g.value(y).data().to_vec()
}

fn ca(store: &ParamStore, s: &CrossAttentionScorer, lat: &Tensor, c: &Tensor) -> Vec<f64> {
    let mut g = Graph::with_params(store);
    let (l, c) = (g.constant(lat.clone()).unwrap(), g.constant(c.clone()).unwrap());
    let y = s.score(&mut g, l, c, None).unwrap();
    g.value(y).data().to_vec()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[test]
fn inner_products_match_direct_loops() {
    let mut rng = stream(1, &[]);
    let u = random(1, 8, &mut rng);
    let c = random(6, 8, &mut rng);
    let plain = ip(&u, &c, None);
    let cos = ip(&u, &c, Some(0.5));
    let nu = dot(u.row(0), u.row(0)).sqrt();
    for j in 0..6 {
        assert!((plain[j] - dot(u.row(0), c.row(j))).abs() < 1e-12);
        let expect = dot(u.row(0), c.row(j)) / (nu * dot(c.row(j), c.row(j)).sqrt()) / 0.5;
        assert!((cos[j] - expect).abs() < 1e-12);
    }
}

#[test]
fn non_positive_temperature_rejected() {
    let mut g = Graph::new();
    let u = g.constant(Tensor::ones(1, 3)).unwrap();
    let c = g.constant(Tensor::ones(2, 3)).unwrap();
    assert!(score_inner_product(&mut g, u, c, Some(0.0)).is_err());
}

#[test]
fn single_latent_cross_attention_by_hand() {
    let mut store = ParamStore::new();
    let s = CrossAttentionScorer::new(&mut store, 4, 2, &mut stream(2, &[])).unwrap();
    let mut rng = stream(3, &[]);
    let v = random(1, 4, &mut rng);
    let c = random(3, 4, &mut rng);
    // One key: each head returns its projected value for every query.
    let mut projected = Vec::new();
    for &[_, _, wv] in &s.mha.heads {
        let w = store.value(wv);
        projected.extend((0..w.cols()).map(|k| (0..4).map(|i| v.get(0, i) * w.get(i, k)).sum::<f64>()));
    }
    let w = store.value(s.out.weight);
    let b = store.value(s.out.bias).item();
    let expect: Vec<f64> = (0..3)
        .map(|j| (0..4).map(|i| c.get(j, i) * projected[i] * w.get(i, 0)).sum::<f64>() + b)
        .collect();
    let got = ca(&store, &s, &v, &c);
    for j in 0..3 {
        assert!((got[j] - expect[j]).abs() < 1e-12);
    }
}

#[test]
fn zero_score_weights_give_the_bias() {
    let mut store = ParamStore::new();
    let s = CrossAttentionScorer::new(&mut store, 4, 1, &mut stream(4, &[])).unwrap();
    store.get_mut(s.out.weight).value = Tensor::zeros(4, 1);
    store.get_mut(s.out.bias).value = Tensor::scalar(-1.25);
    let mut rng = stream(5, &[]);
    let got = ca(&store, &s, &random(5, 4, &mut rng), &random(7, 4, &mut rng));
    assert!(got.iter().all(|&y| y == -1.25));
}

#[test]
fn duplicate_candidates_score_identically() {
    let mut store = ParamStore::new();
    let s = CrossAttentionScorer::new(&mut store, 8, 2, &mut stream(6, &[])).unwrap();
    let mut rng = stream(7, &[]);
    let c = random(3, 8, &mut rng);
    let dup = c.select_rows(&[0, 1, 2, 1]);
    let got = ca(&store, &s, &random(4, 8, &mut rng), &dup);
    assert_eq!(got[1], got[3]);
}

proptest! {
    #[test]
    fn lip_loss_is_shift_invariant(
        scores in prop::collection::vec(-10.0f64..10.0, 2..12),
        shift in -100.0f64..100.0,
    ) {
        let shifted: Vec<f64> = scores.iter().map(|x| x + shift).collect();
        prop_assert!((lip(&scores, None) - lip(&shifted, None)).abs() < 1e-9);
    }

    #[test]
    fn lip_loss_decreases_in_the_positive_score(
        scores in prop::collection::vec(-10.0f64..10.0, 2..12),
        up in 1e-3f64..5.0,
    ) {
        let mut higher = scores.clone();
        higher[0] += up;
        prop_assert!(lip(&higher, None) < lip(&scores, None));
    }

    #[test]
    fn cosine_scores_ignore_vector_scale(
        seed in any::<u64>(),
        su in 0.01f64..100.0,
        sc in prop::collection::vec(0.01f64..100.0, 5),
    ) {
        let mut rng = stream(seed, &[]);
        let u = random(1, 8, &mut rng);
        let c = random(5, 8, &mut rng);
        let mut c2 = c.clone();
        for (j, s) in sc.iter().enumerate() {
            c2.row_mut(j).iter_mut().for_each(|x| *x *= s);
        }
        let a = ip(&u, &c, Some(0.1));
        let b = ip(&u.scale(su), &c2, Some(0.1));
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-6);
        }
    }
}
