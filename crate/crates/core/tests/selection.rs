use adasense::numerics::{row_space_basis, sym_eig, Mat, Vector};
use adasense::par::stream;
use adasense::samplers::{center, PosteriorBatch};
use adasense::selection::{
    score_constrained_exact, select_constrained, select_unconstrained, CandidateSet, CandidateSpec, CovarianceSource,
    Criterion, Family,
};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn gauss_mat<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Mat {
    Mat::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn random_spd<R: Rng>(d: usize, rng: &mut R) -> Mat {
    let a = gauss_mat(d, d, rng);
    let s = &a * a.transpose() / d as f64;
    (&s + s.transpose()) * 0.5
}

fn batch_from(m: &Mat) -> PosteriorBatch {
    let rows: Vec<Vector> = (0..m.nrows()).map(|i| m.row(i).transpose()).collect();
    center(PosteriorBatch::from_rows(&rows))
}

#[test]
fn unconstrained_rows_achieve_top_eigenvalue_sum() {
    let mut rng = stream(5, &[]);
    for _ in 0..20 {
        let d = rng.random_range(3..=12usize);
        let r = rng.random_range(1..=d);
        let cov = random_spd(d, &mut rng);
        let sel = select_unconstrained(CovarianceSource::Exact(&cov), r, &Mat::zeros(0, d)).unwrap();
        let best = score_constrained_exact(&sel.rows, &cov).unwrap();
        let eig = sym_eig(&cov).unwrap();
        let top: f64 = eig.values.iter().take(r).sum();
        assert!((best - top).abs() < 1e-8 * top.max(1.0), "{best} vs {top}");
        for _ in 0..100 {
            let q = row_space_basis(&gauss_mat(r, d, &mut rng)).unwrap();
            assert!(score_constrained_exact(&q, &cov).unwrap() <= best + 1e-9 * best);
        }
    }
}

#[test]
fn empirical_rows_lie_in_the_sample_span() {
    let mut rng = stream(6, &[]);
    let x = gauss_mat(5, 9, &mut rng);
    let batch = batch_from(&x);
    let sel = select_unconstrained(CovarianceSource::Empirical(&batch), 3, &Mat::zeros(0, 9)).unwrap();
    let span = row_space_basis(&batch.samples).unwrap();
    let resid = &sel.rows - (&sel.rows * span.transpose()) * &span;
    assert!(resid.amax() < 1e-12);
    assert!(!sel.degenerate);
}

fn argmax(cands: &CandidateSet, batch: &PosteriorBatch, c: Criterion, blocks: usize) -> Vec<usize> {
    let all: Vec<usize> = (0..cands.len()).collect();
    select_constrained(cands, &all, CovarianceSource::Empirical(batch), c, blocks)
        .unwrap()
        .indices
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn argmax_is_scale_invariant(seed in 0u64..10_000, scale in 0.01f64..100.0, fourier in any::<bool>()) {
        let mut rng = stream(seed, &[]);
        let d = 8;
        let x = gauss_mat(6, d, &mut rng);
        let cands = if fourier {
            CandidateSpec::simple(Family::Fourier).build(d).unwrap()
        } else {
            CandidateSet::from_rows(&gauss_mat(12, d, &mut rng)).unwrap()
        };
        let a = batch_from(&x);
        let b = batch_from(&(&x * scale));
        for c in [Criterion::Exact, Criterion::Heuristic] {
            prop_assert_eq!(argmax(&cands, &a, c, 2), argmax(&cands, &b, c, 2));
        }
    }

    #[test]
    fn selection_never_repeats_or_uses_unavailable(seed in 0u64..10_000, blocks in 1usize..4) {
        let mut rng = stream(seed, &[]);
        let d = 8;
        let cands = CandidateSpec::simple(Family::Hadamard).build(d).unwrap();
        let available: Vec<usize> = (0..d).filter(|i| i % 3 != 0).collect();
        let batch = batch_from(&gauss_mat(5, d, &mut rng));
        for c in [Criterion::Exact, Criterion::Heuristic] {
            let sel = select_constrained(&cands, &available, CovarianceSource::Empirical(&batch), c, blocks).unwrap();
            prop_assert_eq!(sel.indices.len(), blocks);
            let mut seen = sel.indices.clone();
            seen.sort_unstable();
            seen.dedup();
            prop_assert_eq!(seen.len(), blocks);
            prop_assert!(sel.indices.iter().all(|i| available.contains(i)));
        }
    }
}

#[test]
fn exhausted_candidates_are_reported() {
    let cands = CandidateSpec::simple(Family::Pixel).build(3).unwrap();
    let batch = batch_from(&Mat::identity(3, 3));
    let err = select_constrained(&cands, &[1], CovarianceSource::Empirical(&batch), Criterion::Exact, 2).unwrap_err();
    assert!(matches!(err, adasense::Error::ExhaustedCandidates { needed: 2, available: 1 }));
}
