//! Registered closed-form functions addressable by name.
//!
//! Time-dependent entries read `t` from the last coordinate of the point.

use std::f64::consts::{FRAC_PI_2, PI};

use super::hyperdual::{HyperDual, Real};
use super::ClosedForm;

fn last<T: Real>(x: &[T]) -> T {
    x[x.len() - 1]
}

fn sin_half_pi<T: Real>(v: T) -> T {
    (v * FRAC_PI_2).sin()
}

fn cos_half_pi<T: Real>(v: T) -> T {
    (v * FRAC_PI_2).cos()
}

fn norm_sq<T: Real>(x: &[T]) -> T {
    x.iter().fold(T::cst(0.0), |acc, &v| acc + v * v)
}

macro_rules! catalog {
    ($($name:ident = $label:literal, dim $min:literal, time $time:literal, |$x:ident| $body:expr;)*) => {
        $(
            fn $name<T: Real>($x: &[T]) -> T {
                $body
            }
        )*

        pub(super) const CATALOG: &[ClosedForm] = &[
            $(ClosedForm {
                name: $label,
                min_dim: $min,
                time_dependent: $time,
                f: $name::<f64>,
                hd: $name::<HyperDual>,
            },)*
        ];
    };
}

catalog! {
    zero = "zero", dim 1, time false, |_x| T::cst(0.0);
    one_plus_norm_sq = "one_plus_norm_sq", dim 1, time false, |x| norm_sq(x) + 1.0;

    eq_weak_exact = "eq_weak_exact", dim 1, time false, |x| {
        if x[0].re() <= 0.5 { x[0].sq() } else { (x[0] - 1.0).sq() }
    };

    sum_sin_half_pi = "sum_sin_half_pi", dim 1, time false,
        |x| x.iter().fold(T::cst(0.0), |acc, &v| acc + sin_half_pi(v));
    smooth_poisson_source = "smooth_poisson_source", dim 1, time false,
        |x| sum_sin_half_pi(x) * (PI * PI / 4.0);

    nonl_cube_exact = "nonl_cube_exact", dim 2, time false,
        |x| (x[0].sq() * FRAC_PI_2 + x[1].sq() * 0.5).sin();
    nonl_cube_source = "nonl_cube_source", dim 2, time false, |x| {
        let r0 = x[0].sq() * FRAC_PI_2 + x[1].sq() * 0.5;
        let r1 = x[0].sq() * (PI * PI / 4.0) + x[1].sq() * 0.25;
        let a = norm_sq(x) + 1.0;
        r1 * a * r0.sin() * 4.0 - r0 * r0.cos() * 4.0 - a * r0.cos() * (PI + 1.0) + r1 * r0.cos().sq() * 2.0
    };

    sin_cos_half_pi = "sin_cos_half_pi", dim 2, time false, |x| sin_half_pi(x[0]) * cos_half_pi(x[1]);
    neumann_source = "neumann_source", dim 2, time false,
        |x| sin_cos_half_pi(x) * (PI * PI / 2.0 + 2.0);
    neumann_flux_1 = "neumann_flux_1", dim 2, time false,
        |x| cos_half_pi(x[0]) * cos_half_pi(x[1]) * FRAC_PI_2;
    neumann_flux_2 = "neumann_flux_2", dim 2, time false,
        |x| -(sin_half_pi(x[0]) * sin_half_pi(x[1]) * FRAC_PI_2);

    poisson_l_source = "poisson_l_source", dim 2, time false, |x| {
        let (s1, c1) = (sin_half_pi(x[0]), cos_half_pi(x[0]));
        let (s2, c2) = (sin_half_pi(x[1]), cos_half_pi(x[1]));
        (norm_sq(x) + 1.0) * s1 * c2 * (PI * PI / 2.0) + x[1] * s1 * s2 * PI - x[0] * c1 * c2 * PI
    };

    exp_parabolic_exact = "exp_parabolic_exact", dim 3, time true,
        |x| sin_cos_half_pi(x) * (-last(x)).exp() * 2.0;
    exp_parabolic_initial = "exp_parabolic_initial", dim 2, time false, |x| sin_cos_half_pi(x) * 2.0;
    // Obtained by substituting the exact solution; the cosine factor of the
    // quadratic term is squared.
    exp_parabolic_source = "exp_parabolic_source", dim 3, time true, |x| {
        let sc = sin_cos_half_pi(x);
        let t = last(x);
        sc * (-t).exp() * (PI * PI - 2.0) - sc.sq() * (-(t * 2.0)).exp() * 4.0
    };

    exp_parabolic_st_exact = "exp_parabolic_st_exact", dim 2, time true,
        |x| sin_half_pi(x[0]) * (-last(x)).exp() * 2.0;
    exp_parabolic_st_initial = "exp_parabolic_st_initial", dim 1, time false, |x| sin_half_pi(x[0]) * 2.0;
    exp_parabolic_st_source = "exp_parabolic_st_source", dim 2, time true, |x| {
        let s = sin_half_pi(x[0]);
        let t = last(x);
        s * (-t).exp() * (PI * PI / 2.0 - 2.0) - s.sq() * (-(t * 2.0)).exp() * 4.0
    };

    heat_exact = "heat_exact", dim 2, time true, |x| (x[0] * PI).sin() * (-(last(x) * (PI * PI))).exp();
    heat_initial = "heat_initial", dim 1, time false, |x| (x[0] * PI).sin();
}
