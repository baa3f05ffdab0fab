//! Least-squares θ for the unclamped parallel model, which is linear in θ
//! on each temperature sign branch: `Y = X + Σ θ_i B_i`.

use crate::error::{Error, Result};
use crate::filters::{unit_increment, FilterContext, FilterKind};
use crate::image::Image;
use crate::render::Recipe;
use crate::scalar::Scalar;

pub const RIDGE: f64 = 1e-8;
/// Sign patterns are enumerated exhaustively (3ⁿ solves).
pub const MAX_TEMPERATURE_ARGS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedForm<T> {
    /// `template` with the solved θ.
    pub recipe: Recipe<T>,
    /// θ in layer/argument order.
    pub thetas: Vec<T>,
    /// `‖target − X − Bθ‖²`.
    pub sse: T,
    /// `max_i |⟨B_i, residual⟩|` over the active columns.
    pub orthogonality: T,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Branch {
    Positive,
    Negative,
    Off,
}

/// Solves `(G + ridge·I) x = b` for symmetric `G` in place by Cholesky.
fn cholesky_solve<T: Scalar>(mut g: Vec<T>, mut b: Vec<T>) -> Result<Vec<T>> {
    let n = b.len();
    for j in 0..n {
        let mut d = g[j * n + j];
        for k in 0..j {
            d -= g[j * n + k] * g[j * n + k];
        }
        if !(d > T::zero()) || !d.is_finite() {
            return Err(Error::DegenerateBasis {
                column: j,
                pivot: d.to_f64_lossy(),
            });
        }
        let l = d.sqrt();
        g[j * n + j] = l;
        for i in j + 1..n {
            let mut s = g[i * n + j];
            for k in 0..j {
                s -= g[i * n + k] * g[j * n + k];
            }
            g[i * n + j] = s / l;
        }
    }
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= g[i * n + k] * b[k];
        }
        b[i] = s / g[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= g[k * n + i] * b[k];
        }
        b[i] = s / g[i * n + i];
    }
    Ok(b)
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

struct Solve<T> {
    thetas: Vec<T>,
    sse: T,
    orthogonality: T,
}

fn solve_columns<T: Scalar>(columns: &[&[T]], rhs: &[T]) -> Result<(Vec<T>, Vec<T>)> {
    let n = columns.len();
    let mut gram = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..=i {
            let v = dot(columns[i], columns[j]);
            gram[i * n + j] = v;
            gram[j * n + i] = v;
        }
        gram[i * n + i] += T::lit(RIDGE);
    }
    let b: Vec<T> = columns.iter().map(|c| dot(c, rhs)).collect();
    let x = cholesky_solve(gram, b)?;
    let mut residual = rhs.to_vec();
    for (c, &xi) in columns.iter().zip(&x) {
        residual.iter_mut().zip(c.iter()).for_each(|(r, &v)| *r -= xi * v);
    }
    Ok((x, residual))
}

/// Least-squares θ for every argument of `template` (masks, σ and
/// constants taken from it; its θ are ignored).
///
/// Each temperature argument is solved on the θ ≥ 0 branch, the θ ≤ 0
/// branch, and pinned at zero; the sign-consistent combination with the
/// smallest residual wins.
pub fn closed_form_l2<T: Scalar>(input: &Image<T>, target: &Image<T>, template: &Recipe<T>) -> Result<ClosedForm<T>> {
    input.ensure_same_dims(target)?;
    template.validate()?;
    let (w, h) = input.dims();
    let ctx = FilterContext::new(input);
    let rhs: Vec<T> = target.data().iter().zip(input.data()).map(|(&t, &x)| t - x).collect();

    // Masked bases per argument: [θ ≥ 0 branch, θ < 0 branch].
    let mut bases: Vec<(FilterKind, Vec<Vec<T>>)> = Vec::new();
    for layer in &template.layers {
        let mask = layer.effective_mask(w, h, template.window)?;
        for arg in &layer.args {
            let branches = if arg.kind.is_sign_branched() { vec![false, true] } else { vec![false] };
            let cols = branches
                .into_iter()
                .map(|negative| {
                    let mut u = unit_increment(arg.kind, negative, &ctx, &template.constants);
                    if let Some(m) = &mask {
                        u.iter_mut().enumerate().for_each(|(i, v)| *v *= m.data()[i / 3]);
                    }
                    u
                })
                .collect();
            bases.push((arg.kind, cols));
        }
    }
    let signed: Vec<usize> = (0..bases.len()).filter(|&i| bases[i].1.len() == 2).collect();
    if signed.len() > MAX_TEMPERATURE_ARGS {
        return Err(Error::field(
            "template",
            format!("at most {MAX_TEMPERATURE_ARGS} temperature filters are supported, got {}", signed.len()),
        ));
    }

    let mut best: Option<Solve<T>> = None;
    let mut last_err = None;
    let patterns = 3usize.pow(signed.len() as u32);
    for code in 0..patterns {
        let mut branch = vec![Branch::Positive; bases.len()];
        let mut c = code;
        for &i in &signed {
            branch[i] = [Branch::Positive, Branch::Negative, Branch::Off][c % 3];
            c /= 3;
        }
        let active: Vec<usize> = (0..bases.len()).filter(|&i| branch[i] != Branch::Off).collect();
        let columns: Vec<&[T]> = active
            .iter()
            .map(|&i| bases[i].1[usize::from(branch[i] == Branch::Negative)].as_slice())
            .collect();
        let (x, residual) = match solve_columns(&columns, &rhs) {
            Ok(v) => v,
            Err(e) => {
                last_err = Some(e);
                continue;
            }
        };
        let consistent = active.iter().zip(&x).all(|(&i, &v)| match branch[i] {
            Branch::Positive => !bases[i].0.is_sign_branched() || v >= T::zero(),
            Branch::Negative => v <= T::zero(),
            Branch::Off => true,
        });
        if !consistent || x.iter().any(|v| !v.is_finite()) {
            continue;
        }
        let sse = dot(&residual, &residual);
        if best.as_ref().is_some_and(|b| b.sse <= sse) {
            continue;
        }
        let orthogonality = columns
            .iter()
            .map(|c| dot(c, &residual).abs())
            .fold(T::zero(), |a, b| a.max(b));
        let mut thetas = vec![T::zero(); bases.len()];
        for (&i, &v) in active.iter().zip(&x) {
            thetas[i] = v;
        }
        best = Some(Solve {
            thetas,
            sse,
            orthogonality,
        });
    }
    let Some(best) = best else {
        return Err(last_err.unwrap_or(Error::DegenerateBasis {
            column: 0,
            pivot: f64::NAN,
        }));
    };
    let mut recipe = template.clone();
    let mut it = best.thetas.iter();
    for layer in &mut recipe.layers {
        for arg in &mut layer.args {
            arg.theta = *it.next().expect("θ count");
        }
    }
    Ok(ClosedForm {
        recipe,
        thetas: best.thetas,
        sse: best.sse,
        orthogonality: best.orthogonality,
    })
}
