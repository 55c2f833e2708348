use bilevel_core::diagnostics::{exact_hypergradient_pinv, gradient_check, hessian_eigen_check};
use bilevel_core::drivers::{plan_for, run_f2ba, run_f2bsa, validate_delta_recursion, validate_descent};
use bilevel_core::exec::{map_cells, Execution};
use bilevel_core::oracle::{GradKind, StochasticOracle};
use bilevel_core::problem::dist_to_solution_set;
use bilevel_core::problems::{self, hard_instance::HardInstanceSpec, SuiteProblem};
use bilevel_core::rng::{stream_id, substream, Purpose};
use bilevel_core::schedule::{KRule, ScheduleOverrides};
use bilevel_core::{vecops, BilevelProblem, ProblemConstants};
use nalgebra::DMatrix;
use rand::Rng;

fn smooth_suite() -> Vec<SuiteProblem> {
    vec![
        problems::make_quadratic_sc(),
        problems::make_kernel_pl(),
        problems::make_sin_sq_pl(),
        problems::make_hard_instance(HardInstanceSpec::new(2, 2).unwrap()),
    ]
}

#[test]
fn declared_gradients_match_finite_differences() {
    let mut rng = substream(11, 0);
    for s in smooth_suite() {
        let p = s.problem.as_ref();
        let points: Vec<(Vec<f64>, Vec<f64>)> = (0..20)
            .map(|_| {
                let x = (0..p.dim_x()).map(|_| rng.random_range(-2.0..2.0)).collect();
                let y = (0..p.dim_y()).map(|_| rng.random_range(-2.0..2.0)).collect();
                (x, y)
            })
            .collect();
        let r = gradient_check(p, &points, 1e-5).unwrap();
        assert!(r.max_rel_err < 1e-6, "{}: {}", s.name, r.worst);
        let c = p.constants();
        assert!(
            r.l_g_estimate <= c.l_g * (1.0 + 1e-9),
            "{}: L_g estimate {}",
            s.name,
            r.l_g_estimate
        );
    }
}

#[test]
fn minimizer_hessian_eigenvalues_respect_mu() {
    for s in smooth_suite() {
        let p = s.problem.as_ref();
        for x0 in [-1.0, 0.0, 0.7, 1.5] {
            let x = vec![x0; p.dim_x()];
            let Some(y) = p.project_to_solution_set(&x, 0.0, &vec![0.3; p.dim_y()]) else {
                continue;
            };
            let lam = hessian_eigen_check(p, &x, &y, 1e-10)
                .unwrap()
                .expect("nonzero eigenvalue");
            assert!(lam >= p.constants().mu - 1e-6, "{}: {lam} < mu at x = {x0}", s.name);
        }
    }
}

#[test]
fn deterministic_runs_descend_on_phi() {
    let cases: [(SuiteProblem, ScheduleOverrides); 3] = [
        (
            problems::make_kernel_pl(),
            ScheduleOverrides {
                t_outer: Some(2000),
                ..Default::default()
            },
        ),
        // ∇φ = 2x − 1 here, so the unit theory step only oscillates. The φ_σ
        // minimizer sits O(σ) past 0.5, so φ climbs by O(σ²) once x crosses it.
        (
            problems::make_quadratic_sc(),
            ScheduleOverrides {
                c_eta: Some(0.5),
                sigma: Some(1e-5),
                t_outer: Some(2000),
                ..Default::default()
            },
        ),
        (
            problems::make_sin_sq_pl(),
            // The theory step is tiny at this condition number.
            ScheduleOverrides {
                eta: Some(0.1),
                sigma: Some(1e-3),
                k: Some(50),
                t_outer: Some(100),
                ..Default::default()
            },
        ),
    ];
    for (s, ov) in cases {
        let plan = plan_for(s.problem.as_ref(), &s.x0, &s.y0, 1e-2, &ov).unwrap();
        let tr = run_f2ba(s.problem.as_ref(), &plan, &s.x0, &s.y0).unwrap();
        validate_descent(&tr, 1e-9).unwrap_or_else(|e| panic!("{}: {e}", s.name));
    }
}

#[test]
fn stochastic_inner_descent_contracts_in_expectation() {
    let s = problems::make_kernel_pl();
    let p = s.problem.as_ref();
    let c = p.constants();
    let (m_g, batch, reps) = (0.3, 4usize, 200usize);
    let x = [0.4];
    let y0 = [2.0, -1.0];
    let d0 = dist_to_solution_set(p, &x, 0.0, &y0).unwrap().powi(2);
    for k in [1usize, 3, 10] {
        let mut oracle = StochasticOracle::new(p, 0.0, m_g, 77 + k as u64).unwrap();
        let mut mean = 0.0;
        for _ in 0..reps {
            let mut z = y0.to_vec();
            for _ in 0..k {
                let g = oracle.noisy_grads(GradKind::GY, &x, &z, batch).unwrap();
                vecops::descend(&mut z, 1.0 / c.l_g, &g);
            }
            mean += dist_to_solution_set(p, &x, 0.0, &z).unwrap().powi(2) / reps as f64;
        }
        let rate = 1.0 - c.mu / c.l_g;
        let bound = rate.powi(k as i32) * (c.l_g / c.mu) * d0
            + m_g * m_g / (c.mu * c.l_g * batch as f64) * (1.0 + 3.0 / (reps as f64).sqrt());
        assert!(mean <= bound, "K = {k}: {mean} > {bound}");
    }
}

#[test]
fn f2bsa_reaches_target_on_average() {
    let s = problems::make_kernel_pl();
    let p = s.problem.as_ref();
    let mut plan = plan_for(p, &s.x0, &s.y0, 5e-2, &ScheduleOverrides::default()).unwrap();
    plan.constants = p.constants().clone().with_noise(0.0, 0.1);
    let plan = bilevel_core::schedule::build_schedule(
        &plan.constants,
        plan.epsilon,
        plan.delta_big,
        plan.r_init,
        &ScheduleOverrides::default(),
    )
    .unwrap();
    assert!(plan.batch > 0 && plan.k_rule == KRule::Adaptive);
    let seeds: Vec<u64> = (0..20).collect();
    let mins = map_cells(Execution::Parallel.effective(), &seeds, |_, &seed| {
        let tr = run_f2bsa(p, &plan, &s.x0, &s.y0, seed).unwrap();
        validate_delta_recursion(&tr).unwrap();
        tr.summary.min_analytic_norm.unwrap()
    });
    let mean = mins.iter().sum::<f64>() / mins.len() as f64;
    assert!(mean <= 5e-2, "mean min analytic norm {mean}");
}

#[test]
fn parallel_and_sequential_cells_agree_bitwise() {
    let s = problems::make_kernel_pl();
    let p = s.problem.as_ref();
    let mut plan = plan_for(p, &s.x0, &s.y0, 0.1, &ScheduleOverrides::default()).unwrap();
    plan.constants = p.constants().clone().with_noise(0.5, 0.1);
    plan.batch = 8;
    plan.t_outer = 50;
    let seeds: Vec<u64> = (0..8).collect();
    let run = |mode| {
        map_cells(mode, &seeds, |i, &seed| {
            let tr = bilevel_core::drivers::run_f2bsa_on_stream(
                p,
                &plan,
                &s.x0,
                &s.y0,
                seed,
                stream_id(i, Purpose::OracleNoise),
            )
            .unwrap();
            tr.rows.iter().map(|r| r.est_norm.to_bits()).collect::<Vec<_>>()
        })
    };
    assert_eq!(run(Execution::Sequential), run(Execution::Parallel));
}

/// `f` constant, `g = ½(y₁ − x)²`: the true hypergradient is zero.
struct FlatUpper(ProblemConstants);

impl BilevelProblem for FlatUpper {
    fn dim_x(&self) -> usize {
        1
    }
    fn dim_y(&self) -> usize {
        2
    }
    fn f(&self, _x: &[f64], _y: &[f64]) -> f64 {
        3.0
    }
    fn grad_f_x(&self, _x: &[f64], _y: &[f64]) -> Vec<f64> {
        vec![0.0]
    }
    fn grad_f_y(&self, _x: &[f64], _y: &[f64]) -> Vec<f64> {
        vec![0.0, 0.0]
    }
    fn g(&self, x: &[f64], y: &[f64]) -> f64 {
        0.5 * (y[0] - x[0]).powi(2)
    }
    fn grad_g_x(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        vec![x[0] - y[0]]
    }
    fn grad_g_y(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        vec![y[0] - x[0], 0.0]
    }
    fn constants(&self) -> &ProblemConstants {
        &self.0
    }
    fn hess_g_yy(&self, _x: &[f64], _y: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]))
    }
    fn hess_g_xy(&self, _x: &[f64], _y: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_row_slice(1, 2, &[-1.0, 0.0]))
    }
}

#[test]
fn constant_upper_level_has_zero_hypergradient() {
    let p = FlatUpper(problems::make_kernel_pl().problem.constants().clone());
    for x in [-2.0, 0.0, 1.3] {
        assert_eq!(exact_hypergradient_pinv(&p, &[x], &[x, 5.0]).unwrap(), vec![0.0]);
    }
}
