//! The nonlinearity `F`, the tangent projection onto the unit L² sphere, and
//! the projected vector field in its literal and expanded forms.
//!
//! With `u` on the sphere `M = {|u|_{L²} = 1}`:
//!
//! ```text
//! F(u)       = ‖Δu‖² u + 2‖∇u‖² u + ‖u‖^{2n}_{L^{2n}} u - u^{2n-1}
//! expanded   = -Au + F(u)
//! literal    = π_u(-Au - a u - u^{2n-1}),   π_u(h) = h - ⟨h, u⟩ u
//! ```
//!
//! The two forms agree on `M` for every `a`. Off `M` they differ, which is
//! what the invariance probes exploit.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::spectral::{inner_l2, norm_l2, Field, ModeEmbedding, SpectralField, SpectralGrid};

/// Tolerance on `| |u|_{L²} - 1 |` accepted as "on the manifold".
pub const MANIFOLD_TOL: f64 = 1e-8;

/// Exponent of the pointwise power `u^{2n-1}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Exponent {
    /// Integer `n >= 1`: the odd power `u^{2n-1}`.
    Odd(u32),
    /// Real `n > 1/2`: the signed power `sign(u) |u|^{2n-1}`.
    Signed(f64),
}

impl Exponent {
    pub fn value(self) -> f64 {
        match self {
            Exponent::Odd(n) => n as f64,
            Exponent::Signed(n) => n,
        }
    }

    pub fn validate(self) -> Result<()> {
        match self {
            Exponent::Odd(0) => Err(Error::Domain("exponent n must be >= 1".into())),
            Exponent::Signed(n) if !(n > 0.5 && n.is_finite()) => {
                Err(Error::Domain(format!("real exponent n = {n} must exceed 1/2")))
            }
            _ => Ok(()),
        }
    }

    /// `x^{2n-1}` (signed for real `n`).
    pub fn power(self, x: f64) -> f64 {
        match self {
            Exponent::Odd(n) => x.powi(2 * n as i32 - 1),
            Exponent::Signed(n) => x.signum() * x.abs().powf(2.0 * n - 1.0),
        }
    }

    /// `|x|^{2n}`.
    pub fn density(self, x: f64) -> f64 {
        match self {
            Exponent::Odd(n) => x.powi(2 * n as i32),
            Exponent::Signed(n) => x.abs().powf(2.0 * n),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dealias {
    None,
    /// Evaluate pointwise powers on a grid refined by this factor.
    ZeroPad(usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelParams {
    pub exponent: Exponent,
    /// Linear coefficient; cancels exactly on the manifold.
    pub a: f64,
    pub dealias: Dealias,
}

impl ModelParams {
    /// Integer exponent `n`, `a = 0`, zero padding by `n` (exact for `u^{2n-1}`).
    pub fn new(n: u32) -> Self {
        Self {
            exponent: Exponent::Odd(n),
            a: 0.0,
            dealias: Dealias::ZeroPad(n.max(1) as usize),
        }
    }

    pub fn with_a(mut self, a: f64) -> Self {
        self.a = a;
        self
    }

    pub fn with_dealias(mut self, dealias: Dealias) -> Self {
        self.dealias = dealias;
        self
    }

    pub fn n(&self) -> f64 {
        self.exponent.value()
    }

    pub fn validate(&self) -> Result<()> {
        self.exponent.validate()?;
        if !self.a.is_finite() {
            return Err(Error::Domain("coefficient a must be finite".into()));
        }
        if let Dealias::ZeroPad(factor) = self.dealias {
            if (factor as f64) < self.n().ceil() {
                return Err(Error::Domain(format!(
                    "zero-padding factor {factor} is below n = {}",
                    self.n()
                )));
            }
        }
        Ok(())
    }
}

/// Which algebraic form of the projected vector field to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldForm {
    /// `-Au + F(u)`.
    Expanded,
    /// `π_u(-Au - a u - u^{2n-1})` with the literal projection formula.
    Direct,
}

/// Scalars and the power term of one state, all on a common quadrature.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub state: SpectralField,
    pub l2_sq: f64,
    pub h1_sq: f64,
    pub h2_sq: f64,
    /// `‖u‖^{2n}_{L^{2n}}`.
    pub l2n_pow: f64,
    /// Coefficients of `u^{2n-1}`.
    pub power: SpectralField,
}

impl Evaluation {
    /// `‖u‖²_{H²₀} + 2‖u‖²_{H¹₀} + ‖u‖^{2n}_{L^{2n}}`.
    pub fn multiplier(&self) -> f64 {
        self.h2_sq + 2.0 * self.h1_sq + self.l2n_pow
    }

    pub fn v_norm_sq(&self) -> f64 {
        self.l2_sq + 2.0 * self.h1_sq + self.h2_sq
    }

    pub fn nonlinearity(&self) -> SpectralField {
        self.state.scaled(self.multiplier()).axpy(-1.0, &self.power)
    }
}

struct Padding {
    grid: Arc<SpectralGrid>,
    embedding: ModeEmbedding,
}

/// The model on a fixed grid; caches the dealiasing grid.
pub struct Model {
    grid: Arc<SpectralGrid>,
    params: ModelParams,
    padding: Option<Padding>,
}

impl Model {
    pub fn new(grid: &Arc<SpectralGrid>, params: ModelParams) -> Result<Self> {
        params.validate()?;
        let padding = match params.dealias {
            Dealias::ZeroPad(factor) if factor > 1 => {
                let fine = grid.refined(factor);
                let embedding = ModeEmbedding::new(grid, &fine)?;
                Some(Padding { grid: fine, embedding })
            }
            _ => None,
        };
        Ok(Self {
            grid: grid.clone(),
            params,
            padding,
        })
    }

    pub fn grid(&self) -> &Arc<SpectralGrid> {
        &self.grid
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn n(&self) -> f64 {
        self.params.n()
    }

    fn check_grid(&self, grid: &SpectralGrid) -> Result<()> {
        if self.grid.same_as(grid) {
            Ok(())
        } else {
            Err(Error::Structural("field does not live on the model grid".into()))
        }
    }

    /// Pointwise power and `∫|u|^{2n}` on the quadrature grid.
    ///
    /// `values`, when given, are the collocation values of `c` and spare an
    /// inverse transform on the unpadded path.
    fn power_and_density(&self, c: &SpectralField, values: Option<&[f64]>) -> Result<(SpectralField, f64)> {
        let exponent = self.params.exponent;
        let (grid, values) = match (&self.padding, values) {
            (Some(pad), _) => {
                let fine = SpectralField::new(pad.grid.clone(), pad.embedding.embed(c.coeffs()))?;
                (pad.grid.clone(), fine.to_field().into_values())
            }
            (None, Some(v)) => (self.grid.clone(), v.to_vec()),
            (None, None) => (self.grid.clone(), c.to_field().into_values()),
        };
        let mut density = 0.0;
        let mut powered = Vec::with_capacity(values.len());
        for (index, &x) in values.iter().enumerate() {
            let p = exponent.power(x);
            if !p.is_finite() {
                return Err(Error::Overflow { index, value: x });
            }
            density += exponent.density(x);
            powered.push(p);
        }
        let density = density * grid.cell_volume();
        let coeffs = Field::new(grid, powered)?.to_spectral();
        let coeffs = match &self.padding {
            Some(pad) => SpectralField::new(self.grid.clone(), pad.embedding.restrict(coeffs.coeffs()))?,
            None => coeffs,
        };
        Ok((coeffs, density))
    }

    pub fn evaluate(&self, c: &SpectralField) -> Result<Evaluation> {
        self.check_grid(c.grid())?;
        let (power, l2n_pow) = self.power_and_density(c, None)?;
        Ok(Evaluation {
            state: c.clone(),
            l2_sq: c.l2_sq(),
            h1_sq: c.h1_sq(),
            h2_sq: c.h2_sq(),
            l2n_pow,
            power,
        })
    }

    /// `u^{2n-1}`, dealiased per the model parameters.
    pub fn power_term(&self, u: &Field) -> Result<Field> {
        self.check_grid(u.grid())?;
        Ok(self.power_and_density(&u.to_spectral(), Some(u.values()))?.0.to_field())
    }

    /// `‖u‖^{2n}_{L^{2n}}` on the same quadrature the power term uses, so
    /// that `⟨u^{2n-1}, u⟩ = ‖u‖^{2n}_{L^{2n}}` holds to rounding.
    pub fn l2n_pow(&self, u: &Field) -> Result<f64> {
        self.check_grid(u.grid())?;
        Ok(self.power_and_density(&u.to_spectral(), Some(u.values()))?.1)
    }

    /// `F(u) = F₁ + F₂ + F₃ + F₄`.
    pub fn nonlinearity(&self, u: &Field) -> Result<Field> {
        Ok(self.evaluate(&u.to_spectral())?.nonlinearity().to_field())
    }

    pub fn nonlinearity_spectral(&self, c: &SpectralField) -> Result<SpectralField> {
        Ok(self.evaluate(c)?.nonlinearity())
    }

    /// Vector field without any manifold check; the forms differ off `M`.
    pub fn vector_field(&self, c: &SpectralField, form: FieldForm) -> Result<SpectralField> {
        let eval = self.evaluate(c)?;
        let au = c.map_modes(|_, m| m);
        Ok(match form {
            FieldForm::Expanded => eval.nonlinearity().axpy(-1.0, &au),
            FieldForm::Direct => {
                let g = au
                    .scaled(-1.0)
                    .axpy(-self.params.a, c)
                    .axpy(-1.0, &eval.power);
                let along = g.inner(c);
                g.axpy(-along, c)
            }
        })
    }

    /// `-Au + F(u)` for `u` on the manifold.
    pub fn projected_rhs(&self, u: &Field) -> Result<Field> {
        check_on_manifold(u)?;
        Ok(self.vector_field(&u.to_spectral(), FieldForm::Expanded)?.to_field())
    }

    /// `π_u(-Au - a u - u^{2n-1})` for `u` on the manifold.
    pub fn projected_rhs_direct(&self, u: &Field) -> Result<Field> {
        check_on_manifold(u)?;
        let c = u.to_spectral();
        let g = c
            .map_modes(|_, m| -m)
            .axpy(-self.params.a, &c)
            .to_field();
        let g = &g - &self.power_term(u)?;
        project_tangent(u, &g)
    }
}

fn check_on_manifold(u: &Field) -> Result<()> {
    let norm = norm_l2(u);
    if (norm - 1.0).abs() > MANIFOLD_TOL {
        return Err(Error::Contract(format!(
            "base point has |u|_L2 = {norm:.12}, expected 1 within {MANIFOLD_TOL:e}"
        )));
    }
    Ok(())
}

/// `u^{2n-1}` on the grid of `u`, optionally evaluated on a refined grid.
pub fn power_term(u: &Field, params: &ModelParams) -> Result<Field> {
    Model::new(u.grid(), *params)?.power_term(u)
}

/// `π_u(h) = h - ⟨h, u⟩ u`; requires `|u|_{L²} = 1`.
pub fn project_tangent(u: &Field, h: &Field) -> Result<Field> {
    check_on_manifold(u)?;
    let along = inner_l2(h, u)?;
    Ok(h - &u.scaled(along))
}

/// A tangent vector at a point of the manifold.
#[derive(Clone, Debug)]
pub struct TangentVector {
    base: Field,
    vec: Field,
}

impl TangentVector {
    /// Projects `h` onto the tangent space at `base`.
    pub fn project(base: Field, h: &Field) -> Result<Self> {
        let vec = project_tangent(&base, h)?;
        Ok(Self { base, vec })
    }

    pub fn base(&self) -> &Field {
        &self.base
    }

    pub fn vec(&self) -> &Field {
        &self.vec
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{DomainSpec, SpectralGrid};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn line(n: usize) -> Arc<SpectralGrid> {
        SpectralGrid::new(DomainSpec::interval(PI, n).unwrap())
    }

    fn ground(g: &Arc<SpectralGrid>) -> Field {
        Field::mode(g, &[1]).unwrap()
    }

    fn random_unit(g: &Arc<SpectralGrid>, seed: u64) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = SpectralField::random_decaying(g, &mut rng, 3.0);
        let c = c.scaled(1.0 / c.l2_sq().sqrt());
        c.to_field()
    }

    #[test]
    fn params_validation() {
        assert!(ModelParams::new(0).validate().is_err());
        assert!(ModelParams::new(2).with_dealias(Dealias::ZeroPad(1)).validate().is_err());
        assert!(ModelParams::new(2).with_dealias(Dealias::None).validate().is_ok());
        let real = ModelParams {
            exponent: Exponent::Signed(0.4),
            a: 0.0,
            dealias: Dealias::None,
        };
        assert!(real.validate().is_err());
    }

    #[test]
    fn power_term_cases() {
        let g = line(32);
        let u = random_unit(&g, 1);
        let p1 = power_term(&u, &ModelParams::new(1)).unwrap();
        assert!(p1.max_abs_diff(&u) < 1e-14);

        let pg = SpectralGrid::new(
            DomainSpec::new(vec![1.0], vec![16], crate::spectral::Boundary::Periodic).unwrap(),
        );
        let two = Field::from_fn(&pg, |_| 2.0).unwrap();
        let cube = power_term(&two, &ModelParams::new(2)).unwrap();
        assert!(cube.values().iter().all(|&v| (v - 8.0).abs() < 1e-12));

        for n in 1..=3 {
            let p = ModelParams::new(n);
            let plus = power_term(&u, &p).unwrap();
            let minus = power_term(&u.scaled(-1.0), &p).unwrap();
            assert!((&plus + &minus).values().iter().all(|v| v.abs() < 1e-13));
        }
    }

    #[test]
    fn dealiased_cube_matches_exact_projection() {
        // u = φ₁ + φ₂ on [0, π]; u³ has modes up to 6, and its projection onto
        // modes 1..=N is exact once the grid is padded.
        let g = line(8);
        let u = &Field::mode(&g, &[1]).unwrap() + &Field::mode(&g, &[2]).unwrap();
        let padded = power_term(&u, &ModelParams::new(2)).unwrap().to_spectral();
        let s = (2.0 / PI).sqrt();
        let m = 400_000;
        for k in 1..=8usize {
            let dx = PI / m as f64;
            let exact: f64 = (0..m)
                .map(|i| {
                    let x = (i as f64 + 0.5) * dx;
                    let v = s * (x.sin() + (2.0 * x).sin());
                    v.powi(3) * s * (k as f64 * x).sin() * dx
                })
                .sum();
            assert!((padded.coeffs()[k - 1] - exact).abs() < 1e-9, "mode {k}");
        }
    }

    #[test]
    fn overflow_is_reported_with_location() {
        let g = line(8);
        let mut vals = vec![0.0; 8];
        vals[3] = 1e200;
        let u = Field::new(g, vals).unwrap();
        let p = ModelParams::new(2).with_dealias(Dealias::None);
        assert!(matches!(power_term(&u, &p), Err(Error::Overflow { index: 3, .. })));
    }

    #[test]
    fn nonlinearity_at_ground_state() {
        let g = line(32);
        let u = ground(&g);
        let model = Model::new(&g, ModelParams::new(1)).unwrap();
        let f = model.nonlinearity(&u).unwrap();
        assert!(f.max_abs_diff(&u.scaled(3.0)) < 1e-13);
        assert!(model
            .nonlinearity(&Field::zeros(&g))
            .unwrap()
            .values()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn nonlinearity_term_by_term() {
        let g = line(32);
        let u = random_unit(&g, 9);
        for n in 1..=3 {
            let model = Model::new(&g, ModelParams::new(n)).unwrap();
            for c in [0.5, 2.0] {
                let v = u.scaled(c);
                // Recompute each term from the spectral_core routines.
                let h2 = crate::spectral::seminorm_h2(&v).powi(2);
                let h1 = crate::spectral::seminorm_h1(&v).powi(2);
                let l2n = model.l2n_pow(&v).unwrap();
                let expect = &v.scaled(h2 + 2.0 * h1 + l2n) - &model.power_term(&v).unwrap();
                let got = model.nonlinearity(&v).unwrap();
                assert!(norm_l2(&(&got - &expect)) <= 1e-12 * norm_l2(&expect));
            }
        }
    }

    #[test]
    fn l2n_matches_power_pairing() {
        let g = line(64);
        let u = random_unit(&g, 4);
        for n in 1..=3 {
            let model = Model::new(&g, ModelParams::new(n)).unwrap();
            let pair = inner_l2(&model.power_term(&u).unwrap(), &u).unwrap();
            let l2n = model.l2n_pow(&u).unwrap();
            assert!((pair - l2n).abs() < 1e-13 * l2n, "n = {n}");
        }
    }

    #[test]
    fn projection_cases() {
        let g = line(16);
        let u = ground(&g);
        let m2 = Field::mode(&g, &[2]).unwrap();
        assert!(norm_l2(&project_tangent(&u, &u).unwrap()) < 1e-15);
        assert!(project_tangent(&u, &m2).unwrap().max_abs_diff(&m2) < 1e-15);
        let h = &u + &m2;
        assert!(project_tangent(&u, &h).unwrap().max_abs_diff(&m2) < 1e-14);
        assert!(matches!(project_tangent(&u.scaled(1.1), &h), Err(Error::Contract(_))));
        let tv = TangentVector::project(u.clone(), &h).unwrap();
        assert!(inner_l2(tv.vec(), tv.base()).unwrap().abs() < 1e-14);
    }

    #[test]
    fn ground_state_is_an_equilibrium_of_both_forms() {
        let g = line(16);
        let model = Model::new(&g, ModelParams::new(1).with_a(2.0)).unwrap();
        let c = SpectralField::mode(&g, &[1]).unwrap();
        for form in [FieldForm::Expanded, FieldForm::Direct] {
            assert!(model.vector_field(&c, form).unwrap().l2_sq().sqrt() < 1e-15);
        }
        let u = ground(&g);
        let tol = 1e-15 * g.mu_max();
        assert!(norm_l2(&model.projected_rhs(&u).unwrap()) < tol);
        assert!(norm_l2(&model.projected_rhs_direct(&u).unwrap()) < tol);
    }

    #[test]
    fn forms_agree_and_are_tangent() {
        let g = line(64);
        for seed in 0..10 {
            let u = random_unit(&g, seed);
            for n in 1..=3 {
                let base = Model::new(&g, ModelParams::new(n)).unwrap();
                let r = base.projected_rhs(&u).unwrap();
                assert!(inner_l2(&r, &u).unwrap().abs() <= 1e-10 * norm_l2(&r));
                for a in [-1.0, 0.0, 1.0, 10.0] {
                    let model = Model::new(&g, ModelParams::new(n).with_a(a)).unwrap();
                    let d = model.projected_rhs_direct(&u).unwrap();
                    assert!(norm_l2(&(&r - &d)) <= 1e-10 * norm_l2(&r), "n={n} a={a}");
                }
            }
        }
    }

    #[test]
    fn forms_differ_off_manifold() {
        let g = line(32);
        // The forms differ by a (|u|² - 1) u.
        let a = 1.5;
        let model = Model::new(&g, ModelParams::new(2).with_a(a)).unwrap();
        let u = random_unit(&g, 5).scaled(1.1).to_spectral();
        let e = model.vector_field(&u, FieldForm::Expanded).unwrap();
        let d = model.vector_field(&u, FieldForm::Direct).unwrap();
        let expect = u.scaled(a * (u.l2_sq() - 1.0));
        let diff = &d - &e;
        assert!((&diff - &expect).l2_sq().sqrt() < 1e-10 * expect.l2_sq().sqrt());
    }
}
