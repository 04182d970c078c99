//! Central finite-difference gradient checking.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_MAX_ENTRIES: usize = 200;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Path and flat index of the entry with the largest error.
    pub worst: Option<(String, usize)>,
}

/// Relative error with the denominator floored at `floor`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / denom
}

/// Denominator floor for an objective of magnitude `loss`. Central
/// differences carry rounding noise near `eps * |loss| / h`, so gradients
/// below `1e-7 * max(1, |loss|)` are compared in absolute terms.
pub fn error_floor(loss: f64) -> f64 {
    1e-7 * loss.abs().max(1.0)
}

/// Compares reverse-mode gradients of `f` against central differences on up
/// to `max_entries` scalar parameters chosen with `seed`.
///
/// `f` builds a scalar loss on the supplied graph from the supplied store. It
/// is called once on a recording graph and twice per checked entry on
/// forward-only graphs, so it must be deterministic.
pub fn grad_check<F>(f: F, store: &ParamStore, h: f64, max_entries: usize, seed: u64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    if h <= 0.0 {
        return Err(Error::InvalidArgument(format!("step {h} must be positive")));
    }
    let mut g = Graph::new();
    let loss = f(&mut g, store)?;
    if !g.value(loss).all_finite() {
        return Err(Error::NonFinite { op: "grad_check objective" });
    }
    let floor = error_floor(g.value(loss).data()[0]);
    g.backward(loss)?;
    let analytic = g.param_grads();

    let entries: Vec<(String, usize)> = store
        .iter()
        .flat_map(|(path, p)| (0..p.value.len()).map(move |i| (path.to_string(), i)))
        .collect();
    let chosen: Vec<usize> = if entries.len() <= max_entries {
        (0..entries.len()).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = index::sample(&mut rng, entries.len(), max_entries).into_vec();
        picked.sort_unstable();
        picked
    };

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::no_grad();
        let v = f(&mut g, s)?;
        let out = g
            .value(v)
            .item()
            .ok_or_else(|| Error::NonScalarLoss(g.shape(v).to_vec()))?;
        if !out.is_finite() {
            return Err(Error::NonFinite { op: "grad_check objective" });
        }
        Ok(out)
    };

    let mut perturbed = store.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        worst: None,
    };
    for &e in &chosen {
        let (path, i) = &entries[e];
        let original = store.value(path)?.data()[*i];
        let set = |s: &mut ParamStore, v: f64| {
            s.get_mut(path).expect("path from store").value.data_mut()[*i] = v;
        };
        set(&mut perturbed, original + h);
        let plus = eval(&perturbed)?;
        set(&mut perturbed, original - h);
        let minus = eval(&perturbed)?;
        set(&mut perturbed, original);

        let numeric = (plus - minus) / (2.0 * h);
        let ad = analytic.get(path).map_or(0.0, |t| t.data()[*i]);
        let err = relative_error(ad, numeric, floor);
        report.checked += 1;
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst = Some((path.clone(), *i));
        }
    }
    Ok(report)
}

/// One named primitive-operator check.
#[derive(Clone, Debug)]
pub struct OpCheck {
    pub op: &'static str,
    pub report: GradCheckReport,
}

type Builder = fn(&mut Graph, &ParamStore, &Tensor) -> Result<Var>;

fn weighted_sum(g: &mut Graph, y: Var, weights: &Tensor) -> Result<Var> {
    let n = g.value(y).len();
    let w = g.constant(Tensor::new(g.shape(y).to_vec(), weights.data()[..n].to_vec())?);
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

fn primitive_cases() -> Vec<(&'static str, Builder)> {
    vec![
        ("add", |g, s, w| {
            let (a, b) = (g.param(s, "a")?, g.param(s, "b")?);
            let y = g.add(a, b)?;
            weighted_sum(g, y, w)
        }),
        ("sub", |g, s, w| {
            let (a, b) = (g.param(s, "a")?, g.param(s, "b")?);
            let y = g.sub(a, b)?;
            weighted_sum(g, y, w)
        }),
        ("mul", |g, s, w| {
            let (a, b) = (g.param(s, "a")?, g.param(s, "b")?);
            let y = g.mul(a, b)?;
            weighted_sum(g, y, w)
        }),
        ("add_row", |g, s, w| {
            let (a, r) = (g.param(s, "a")?, g.param(s, "row")?);
            let y = g.add_row(a, r)?;
            weighted_sum(g, y, w)
        }),
        ("scale", |g, s, w| {
            let a = g.param(s, "a")?;
            let y = g.scale(a, -1.7);
            weighted_sum(g, y, w)
        }),
        ("matmul", |g, s, w| {
            let (a, m) = (g.param(s, "a")?, g.param(s, "m")?);
            let y = g.matmul(a, m)?;
            weighted_sum(g, y, w)
        }),
        ("transpose", |g, s, w| {
            let a = g.param(s, "a")?;
            let y = g.transpose(a)?;
            weighted_sum(g, y, w)
        }),
        ("concat_cols", |g, s, w| {
            let (a, b) = (g.param(s, "a")?, g.param(s, "b")?);
            let y = g.concat_cols(&[a, b, a])?;
            weighted_sum(g, y, w)
        }),
        ("concat_rows", |g, s, w| {
            let (a, b) = (g.param(s, "a")?, g.param(s, "b")?);
            let y = g.concat_rows(&[b, a])?;
            weighted_sum(g, y, w)
        }),
        ("slice_cols", |g, s, w| {
            let a = g.param(s, "a")?;
            let y = g.slice_cols(a, 1, 3)?;
            weighted_sum(g, y, w)
        }),
        ("slice_rows", |g, s, w| {
            let a = g.param(s, "a")?;
            let y = g.slice_rows(a, 1, 3)?;
            weighted_sum(g, y, w)
        }),
        ("reshape", |g, s, w| {
            let a = g.param(s, "a")?;
            let y = g.reshape(a, &[2, 2, 4])?;
            weighted_sum(g, y, w)
        }),
        ("mean_rows", |g, s, w| {
            let a = g.param(s, "a")?;
            let y = g.mean_rows(a)?;
            weighted_sum(g, y, w)
        }),
        ("layer_norm", |g, s, w| {
            let (a, gm, bt) = (g.param(s, "a")?, g.param(s, "row")?, g.param(s, "row2")?);
            let y = g.layer_norm(a, gm, bt)?;
            weighted_sum(g, y, w)
        }),
        ("softmax", |g, s, w| {
            let a = g.param(s, "a")?;
            let y = g.softmax(a);
            weighted_sum(g, y, w)
        }),
        ("log_softmax", |g, s, w| {
            let a = g.param(s, "a")?;
            let y = g.log_softmax(a);
            weighted_sum(g, y, w)
        }),
        ("gelu", |g, s, w| {
            let a = g.param(s, "a")?;
            let y = g.gelu(a);
            weighted_sum(g, y, w)
        }),
        ("relu", |g, s, w| {
            let a = g.param(s, "away")?;
            let y = g.relu(a);
            weighted_sum(g, y, w)
        }),
        ("l2_normalize", |g, s, w| {
            let a = g.param(s, "a")?;
            let y = g.l2_normalize(a);
            weighted_sum(g, y, w)
        }),
        ("gather_rows", |g, s, w| {
            let a = g.param(s, "a")?;
            let y = g.gather_rows(a, &[3, 0, 3, 2])?;
            weighted_sum(g, y, w)
        }),
        ("scatter_rows", |g, s, w| {
            let a = g.param(s, "a")?;
            let y = g.scatter_rows(a, &[5, 0, 2, 3], 6)?;
            weighted_sum(g, y, w)
        }),
        ("aggregate", |g, s, w| {
            let adj = Tensor::matrix(2, 2, vec![0.5, 0.5, 0.25, 0.75])?;
            let a = g.param(s, "a")?;
            let y = g.aggregate(&adj, a)?;
            weighted_sum(g, y, w)
        }),
        ("cross_entropy", |g, s, _| {
            let a = g.param(s, "a")?;
            let r = g.slice_rows(a, 2, 3)?;
            g.cross_entropy(r, 1)
        }),
    ]
}

/// Runs a finite-difference check on every differentiable primitive with
/// random `4 x 4` operands. `relu` inputs are kept at least 0.1 away from its
/// kink.
pub fn primitive_suite(seed: u64, h: f64) -> Result<Vec<OpCheck>> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rand_tensor = |shape: &[usize]| {
        let n: usize = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.5..1.5)).collect())
    };
    let mut store = ParamStore::new();
    store.insert("a", rand_tensor(&[4, 4])?)?;
    store.insert("b", rand_tensor(&[4, 4])?)?;
    store.insert("m", rand_tensor(&[4, 3])?)?;
    store.insert("row", rand_tensor(&[4])?)?;
    store.insert("row2", rand_tensor(&[4])?)?;
    let mut away = rand_tensor(&[4, 4])?;
    for v in away.data_mut() {
        *v = v.signum() * (v.abs() + 0.1);
    }
    store.insert("away", away)?;
    let weights = rand_tensor(&[64])?;

    primitive_cases()
        .into_iter()
        .map(|(op, build)| {
            let report = grad_check(|g, s| build(g, s, &weights), &store, h, usize::MAX, seed)?;
            Ok(OpCheck { op, report })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("x", Tensor::row(&[0.3, -1.2, 2.0])).unwrap();
        s
    }

    #[test]
    fn quadratic_form_is_near_exact() {
        let a = Tensor::matrix(3, 3, vec![2.0, 0.5, 0.1, 0.5, 3.0, -0.4, 0.1, -0.4, 1.5]).unwrap();
        let report = grad_check(
            |g, s| {
                let x = g.param(s, "x")?;
                let am = g.constant(a.clone());
                let ax = g.matmul(x, am)?;
                let xax = g.mul(ax, x)?;
                Ok(g.sum(xax))
            },
            &store(),
            DEFAULT_STEP,
            DEFAULT_MAX_ENTRIES,
            0,
        )
        .unwrap();
        assert_eq!(report.checked, 3);
        assert!(report.max_rel_error < 1e-9, "{report:?}");
    }

    #[test]
    fn constant_objective_has_zero_error() {
        let report = grad_check(
            |g, _| Ok(g.constant(Tensor::scalar(4.0))),
            &store(),
            DEFAULT_STEP,
            DEFAULT_MAX_ENTRIES,
            0,
        )
        .unwrap();
        assert_eq!(report.max_rel_error, 0.0);
    }

    #[test]
    fn non_finite_objective_rejected() {
        let err = grad_check(
            |g, _| Ok(g.constant(Tensor::scalar(f64::INFINITY))),
            &store(),
            DEFAULT_STEP,
            DEFAULT_MAX_ENTRIES,
            0,
        );
        assert!(matches!(err, Err(Error::NonFinite { .. })));
    }
}
