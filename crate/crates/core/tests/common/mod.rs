#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use plqid::plq::{add, compose_affine, evaluate, lift_scalar, make_huber, make_l1, make_l2, make_vapnik, scale};
use plqid::PlqRep;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

pub fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-10 * a.abs().max(b.abs()).max(1.0)
}

/// Scalar penalty chosen by `kind`, lifted to `n` coordinates.
pub fn lifted(kind: u8, param: f64, n: usize) -> PlqRep {
    let scalar = match kind % 4 {
        0 => make_l2(),
        1 => make_l1(),
        2 => make_huber(param).unwrap(),
        _ => make_vapnik(param).unwrap(),
    };
    lift_scalar(&scalar, n).unwrap()
}

fn rep_case() -> impl Strategy<Value = (u8, f64, usize)> {
    (0u8..4, 0.1..2.0f64, 1usize..5)
}

fn point(n: usize) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-3.0..3.0f64, n).prop_map(DVector::from_vec)
}

fn runner() -> TestRunner {
    TestRunner::new(Config { cases: 50, failure_persistence: None, ..Config::default() })
}

/// `evaluate(add(r1, r2), y) = evaluate(r1, y) + evaluate(r2, y)`.
pub fn check_add() -> Result<(), String> {
    let strat = rep_case().prop_flat_map(|(k1, p1, n)| (Just((k1, p1, n)), 0u8..4, 0.1..2.0f64, point(n)));
    runner()
        .run(&strat, |((k1, p1, n), k2, p2, y)| {
            let (r1, r2) = (lifted(k1, p1, n), lifted(k2, p2, n));
            let sum = evaluate(&add(&r1, &r2).unwrap(), &y).unwrap();
            prop_assert!(close(sum, evaluate(&r1, &y).unwrap() + evaluate(&r2, &y).unwrap()));
            Ok(())
        })
        .map_err(|e| e.to_string())
}

/// `evaluate(compose_affine(r, E, e), x) = evaluate(r, E x + e)`.
pub fn check_compose() -> Result<(), String> {
    let strat = rep_case().prop_flat_map(|(k, p, n)| {
        let cols = n.min(2);
        (
            Just((k, p, n)),
            prop::collection::vec(-2.0..2.0f64, n * cols),
            point(n),
            point(cols),
        )
    });
    runner()
        .run(&strat, |((kind, param, n), entries, shift, x)| {
            let rep = lifted(kind, param, n);
            let cols = x.len();
            // diagonal boost keeps E injective
            let e = DMatrix::from_fn(n, cols, |i, j| entries[i * cols + j] + if i == j { 5.0 } else { 0.0 });
            let composed = compose_affine(&rep, &e, &shift).unwrap();
            let direct = evaluate(&rep, &(&e * &x + &shift)).unwrap();
            prop_assert!(close(evaluate(&composed, &x).unwrap(), direct));
            Ok(())
        })
        .map_err(|e| e.to_string())
}

/// `evaluate(scale(r, γ), y) = γ evaluate(r, y)`, and scaling back by `1/γ`
/// recovers `r`.
pub fn check_scale() -> Result<(), String> {
    let strat = rep_case().prop_flat_map(|(k, p, n)| (Just((k, p, n)), 0.01..50.0f64, point(n)));
    runner()
        .run(&strat, |((kind, param, n), gamma, y)| {
            let rep = lifted(kind, param, n);
            let scaled = evaluate(&scale(&rep, gamma).unwrap(), &y).unwrap();
            prop_assert!(close(scaled, gamma * evaluate(&rep, &y).unwrap()));
            let back = scale(&scale(&rep, gamma).unwrap(), 1.0 / gamma).unwrap();
            prop_assert!(close(evaluate(&back, &y).unwrap(), evaluate(&rep, &y).unwrap()));
            Ok(())
        })
        .map_err(|e| e.to_string())
}

fn squared_norm(n: usize) -> PlqRep {
    scale(&lift_scalar(&make_l2(), n).unwrap(), 2.0).unwrap()
}

/// Lays the blocks of the expected matrix out as a dense matrix.
fn blocks(rows: &[&[DMatrix<f64>]]) -> DMatrix<f64> {
    let nr: usize = rows.iter().map(|r| r[0].nrows()).sum();
    let nc: usize = rows[0].iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(nr, nc);
    let mut r0 = 0;
    for row in rows {
        let mut c0 = 0;
        for b in row.iter() {
            out.view_mut((r0, c0), b.shape()).copy_from(b);
            c0 += b.ncols();
        }
        r0 += row[0].nrows();
    }
    out
}

fn eye(n: usize) -> DMatrix<f64> {
    DMatrix::identity(n, n)
}

fn zeros(r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::zeros(r, c)
}

fn instance() -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let phi_l = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.3, 2.0]);
    let z = DVector::from_row_slice(&[0.7, -1.1]);
    let l = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.4, 0.8]);
    (phi_l, z, l)
}

pub fn l1_misfit_with_ridge_layout() {
    let (phi_l, z, _) = instance();
    let gamma = 0.3;
    let misfit = compose_affine(&lift_scalar(&make_l1(), 2).unwrap(), &phi_l, &(-&z)).unwrap();
    let rep = add(&misfit, &scale(&squared_norm(2), gamma).unwrap()).unwrap();

    assert_eq!(rep.c().as_slice(), &[1.0, 1.0, 1.0, 1.0, 1.0]);
    // constraint rows Cᵀ: [I, 0; −I, 0; 0, 0]
    let ct = blocks(&[&[eye(2), zeros(2, 2)], &[-eye(2), zeros(2, 2)], &[zeros(1, 2), zeros(1, 2)]]);
    assert_eq!(rep.cmat().transpose(), ct);
    assert_eq!(rep.b().as_slice(), &[-0.7, 1.1, 0.0, 0.0]);
    assert_eq!(*rep.bmat(), blocks(&[&[phi_l.clone()], &[eye(2)]]));
    let m = blocks(&[&[zeros(2, 2), zeros(2, 2)], &[zeros(2, 2), eye(2) / (2.0 * gamma)]]);
    assert!((rep.m() - m).amax() < 1e-15);
}

pub fn vapnik_misfit_with_ridge_layout() {
    let (phi_l, z, _) = instance();
    let (gamma, eps) = (2.0, 0.25);
    let misfit = compose_affine(&lift_scalar(&make_vapnik(eps).unwrap(), 2).unwrap(), &phi_l, &(-&z)).unwrap();
    let rep = add(&misfit, &scale(&squared_norm(2), gamma).unwrap()).unwrap();

    assert_eq!(rep.c().as_slice(), &[1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0]);
    let (i, o) = (eye(2), zeros(2, 2));
    let ct = blocks(&[
        &[i.clone(), o.clone(), o.clone()],
        &[-&i, o.clone(), o.clone()],
        &[o.clone(), i.clone(), o.clone()],
        &[o.clone(), -&i, o.clone()],
        &[zeros(1, 2), zeros(1, 2), zeros(1, 2)],
    ]);
    assert_eq!(rep.cmat().transpose(), ct);
    let b = [-eps - 0.7, -eps + 1.1, -eps + 0.7, -eps - 1.1, 0.0, 0.0];
    assert!(rep.b().iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-15));
    assert_eq!(*rep.bmat(), blocks(&[&[phi_l.clone()], &[-&phi_l], &[eye(2)]]));
    let mut m = zeros(6, 6);
    m.view_mut((4, 4), (2, 2)).copy_from(&(eye(2) / (2.0 * gamma)));
    assert!((rep.m() - m).amax() < 1e-15);
}

pub fn elastic_net_layout() {
    let (phi_l, z, l) = instance();
    let (g1, g2) = (0.5, 3.0);
    let misfit = compose_affine(&lift_scalar(&make_l2(), 2).unwrap(), &phi_l, &(-&z)).unwrap();
    let ridge = scale(&lift_scalar(&make_l2(), 2).unwrap(), g1).unwrap();
    let lasso = scale(&compose_affine(&lift_scalar(&make_l1(), 2).unwrap(), &l, &DVector::zeros(2)).unwrap(), g2).unwrap();
    let rep = add(&add(&misfit, &ridge).unwrap(), &lasso).unwrap();

    assert_eq!(rep.c().as_slice(), &[1.0, 1.0, g2, g2, g2, g2]);
    let ct = blocks(&[
        &[zeros(1, 2), zeros(1, 2), zeros(1, 2)],
        &[zeros(1, 2), zeros(1, 2), zeros(1, 2)],
        &[zeros(2, 2), zeros(2, 2), eye(2)],
        &[zeros(2, 2), zeros(2, 2), -eye(2)],
    ]);
    assert_eq!(rep.cmat().transpose(), ct);
    assert_eq!(rep.b().as_slice(), &[-0.7, 1.1, 0.0, 0.0, 0.0, 0.0]);
    assert_eq!(*rep.bmat(), blocks(&[&[phi_l.clone()], &[eye(2)], &[l.clone()]]));
    let m = blocks(&[
        &[eye(2), zeros(2, 2), zeros(2, 2)],
        &[zeros(2, 2), eye(2) / g1, zeros(2, 2)],
        &[zeros(2, 2), zeros(2, 2), zeros(2, 2)],
    ]);
    assert!((rep.m() - m).amax() < 1e-15);

    // value check against the direct formula
    let y = DVector::from_row_slice(&[0.3, -0.6]);
    let r = &phi_l * &y - &z;
    let direct = 0.5 * r.norm_squared() + 0.5 * g1 * y.norm_squared() + g2 * (&l * &y).abs().sum();
    assert!(close(evaluate(&rep, &y).unwrap(), direct));
}
