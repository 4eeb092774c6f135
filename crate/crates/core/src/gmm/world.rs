//! Source/target world construction and domain posteriors.
//!
//! A `DomainWorld` is a source mixture together with a subset of its
//! components designated as the target domain, a class partition of those
//! target modes, and a scalar prior mass for the target domain. The class
//! split and all geometry come from `WorldLayout`.

use super::{GaussianComponent, GaussianMixture, MixtureFile};
use crate::error::{CoreError, Result};
use crate::rng::SplitRng;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Geometry knobs for `build_world`. Axis-aligned: the bounding box is
/// `[box_min, box_max]^d`, the target region a product of per-axis
/// intervals. Background modes are rejected from the region inflated by
/// `margin`. Mode scales are drawn log-uniformly; target modes may use
/// their own range (they default to the source range).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct WorldLayout {
    pub box_min: f64,
    pub box_max: f64,
    /// Per-axis (lo, hi) of the target region.
    pub target_region: Vec<(f64, f64)>,
    /// Exclusion margin around the target region for background modes.
    pub margin: f64,
    /// Log-uniform range of isotropic mode scales sigma.
    pub sigma_range: (f64, f64),
    /// Separate scale range for target modes; None means `sigma_range`.
    pub target_sigma_range: Option<(f64, f64)>,
    /// Axis along which target modes split into the two classes.
    pub class_split_axis: usize,
    /// Prior mass p(D_tgt) stored on the world.
    pub target_prior: f64,
}

impl WorldLayout {
    /// Defaults for the 2-D study: unit-scale box, off-center target
    /// region with tight modes over a smoother background.
    pub fn default_2d() -> Self {
        Self {
            box_min: -1.0,
            box_max: 1.0,
            target_region: vec![(0.1, 0.7), (0.1, 0.7)],
            margin: 0.05,
            sigma_range: (0.10, 0.20),
            target_sigma_range: Some((0.04, 0.06)),
            class_split_axis: 0,
            target_prior: 0.05,
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.target_region.len() != dim {
            return Err(CoreError::DimensionMismatch {
                expected: dim,
                actual: self.target_region.len(),
            });
        }
        if !(self.box_min < self.box_max) {
            return Err(CoreError::invalid("layout", "box_min must be below box_max"));
        }
        for &(lo, hi) in &self.target_region {
            if !(lo < hi) {
                return Err(CoreError::invalid("layout", "empty target region interval"));
            }
            if lo < self.box_min || hi > self.box_max {
                return Err(CoreError::invalid("layout", "target region outside bounding box"));
            }
        }
        let (slo, shi) = self.sigma_range;
        if !(slo > 0.0 && slo <= shi) {
            return Err(CoreError::invalid("layout", "bad sigma_range"));
        }
        if let Some((tlo, thi)) = self.target_sigma_range {
            if !(tlo > 0.0 && tlo <= thi) {
                return Err(CoreError::invalid("layout", "bad target_sigma_range"));
            }
        }
        if self.class_split_axis >= dim {
            return Err(CoreError::invalid("layout", "class_split_axis out of range"));
        }
        if self.margin < 0.0 {
            return Err(CoreError::invalid("layout", "negative margin"));
        }
        // The inflated region must leave room for background modes.
        let all_covered = (0..dim).all(|k| {
            let (lo, hi) = self.target_region[k];
            lo - self.margin <= self.box_min && hi + self.margin >= self.box_max
        });
        if all_covered {
            return Err(CoreError::invalid("layout", "inflated target region covers the whole box"));
        }
        Ok(())
    }

    fn in_inflated_region(&self, p: &DVector<f64>) -> bool {
        self.target_region
            .iter()
            .enumerate()
            .all(|(k, &(lo, hi))| p[k] >= lo - self.margin && p[k] <= hi + self.margin)
    }
}

/// Source mixture plus the target sub-domain structure.
#[derive(Debug, Clone)]
pub struct DomainWorld {
    source: GaussianMixture,
    target_mode_indices: Vec<usize>,
    /// Class label of each target mode, parallel to `target_mode_indices`.
    class_partition: Vec<usize>,
    target_prior: f64,
}

impl DomainWorld {
    pub fn new(
        source: GaussianMixture,
        target_mode_indices: Vec<usize>,
        class_partition: Vec<usize>,
        target_prior: f64,
    ) -> Result<Self> {
        let n = source.components().len();
        if target_mode_indices.is_empty() || target_mode_indices.len() >= n {
            return Err(CoreError::invalid(
                "target_mode_indices",
                "target modes must be a nonempty strict subset of the source components",
            ));
        }
        let mut seen = vec![false; n];
        for &i in &target_mode_indices {
            if i >= n {
                return Err(CoreError::invalid("target_mode_indices", format!("index {i} out of range")));
            }
            if seen[i] {
                return Err(CoreError::invalid("target_mode_indices", format!("duplicate index {i}")));
            }
            seen[i] = true;
        }
        if class_partition.len() != target_mode_indices.len() {
            return Err(CoreError::invalid(
                "class_partition",
                "every target mode needs exactly one class label",
            ));
        }
        if !(target_prior > 0.0 && target_prior < 1.0) {
            return Err(CoreError::invalid("target_prior", format!("{target_prior} outside (0, 1)")));
        }
        Ok(Self {
            source,
            target_mode_indices,
            class_partition,
            target_prior,
        })
    }

    pub fn dim(&self) -> usize {
        self.source.dim()
    }

    pub fn source(&self) -> &GaussianMixture {
        &self.source
    }

    pub fn target_mode_indices(&self) -> &[usize] {
        &self.target_mode_indices
    }

    pub fn class_partition(&self) -> &[usize] {
        &self.class_partition
    }

    pub fn target_prior(&self) -> f64 {
        self.target_prior
    }

    pub fn class_count(&self) -> usize {
        self.class_partition.iter().max().map_or(0, |m| m + 1)
    }

    fn sub_mixture(&self, keep: impl Fn(usize) -> bool) -> GaussianMixture {
        let comps: Vec<GaussianComponent> = self
            .target_mode_indices
            .iter()
            .enumerate()
            .filter(|(pos, _)| keep(*pos))
            .map(|(_, &i)| self.source.components()[i].clone())
            .collect();
        GaussianMixture::normalized(comps).expect("target modes form a valid mixture")
    }

    /// Renormalized mixture over the target modes, p_t(x).
    pub fn target_mixture(&self) -> GaussianMixture {
        self.sub_mixture(|_| true)
    }

    /// Renormalized class-conditional target mixture, p_t(x | c).
    pub fn class_mixture(&self, class: usize) -> Result<GaussianMixture> {
        if !self.class_partition.contains(&class) {
            return Err(CoreError::UnknownClass {
                class,
                count: self.class_count(),
            });
        }
        Ok(self.sub_mixture(|pos| self.class_partition[pos] == class))
    }

    /// grad_x log p(D_tgt | x_t) at noise level `abar`: the difference of
    /// the noised target and noised source scores. The target prior only
    /// shifts the log-posterior by a constant, so it drops out here.
    pub fn domain_posterior_log_grad(&self, x: &DVector<f64>, abar: f64) -> Result<DVector<f64>> {
        let tgt = self.target_mixture().noised_marginal(abar)?;
        let src = self.source.noised_marginal(abar)?;
        let (_, s_tgt) = tgt.log_density_and_score(x)?;
        let (_, s_src) = src.log_density_and_score(x)?;
        Ok(s_tgt - s_src)
    }

    /// log p(D_tgt | x_t) up to its normalizing constant:
    /// log target_prior + log p_t^tgt(x) - log p_t^src(x).
    pub fn log_posterior_unnormalized(&self, x: &DVector<f64>, abar: f64) -> Result<f64> {
        let tgt = self.target_mixture().noised_marginal(abar)?;
        let src = self.source.noised_marginal(abar)?;
        Ok(self.target_prior.ln() + tgt.log_density(x)? - src.log_density(x)?)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let file = WorldFile::from_world(self);
        let text = serde_json::to_string_pretty(&file)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: WorldFile = serde_json::from_str(&text)?;
        file.into_world()
    }
}

/// Deterministically build a world: background modes uniform in the box
/// (outside the inflated target region), target modes inside the region,
/// split into two classes by the lower/upper halves along the split axis.
/// Component weights are uniform 1/n_source.
pub fn build_world(
    seed: u64,
    n_source: usize,
    n_target: usize,
    dim: usize,
    layout: &WorldLayout,
) -> Result<DomainWorld> {
    if n_target == 0 || n_target >= n_source {
        return Err(CoreError::invalid("n_target", "need 0 < n_target < n_source"));
    }
    layout.validate(dim)?;

    let root = SplitRng::new(seed);
    let mut mean_rng = root.derive(0);
    let mut sigma_rng = root.derive(1);
    let mut target_rng = root.derive(2);

    let n_background = n_source - n_target;
    let weight = 1.0 / n_source as f64;
    let mut comps: Vec<GaussianComponent> = Vec::with_capacity(n_source);

    let (slo, shi) = layout.sigma_range;
    let draw_sigma = |rng: &mut SplitRng, range: (f64, f64)| -> f64 {
        (rng.uniform(range.0.ln(), range.1.ln())).exp()
    };

    let mut placed = 0usize;
    let mut attempts = 0usize;
    while placed < n_background {
        attempts += 1;
        if attempts > 10_000 * n_background {
            return Err(CoreError::invalid(
                "layout",
                "could not place background modes outside the inflated target region",
            ));
        }
        let p = DVector::from_fn(dim, |_, _| mean_rng.uniform(layout.box_min, layout.box_max));
        if layout.in_inflated_region(&p) {
            continue;
        }
        let sigma = draw_sigma(&mut sigma_rng, (slo, shi));
        comps.push(GaussianComponent::isotropic(p, sigma, weight)?);
        placed += 1;
    }

    // Target modes: lower half of the split axis first, then upper.
    let axis = layout.class_split_axis;
    let (alo, ahi) = layout.target_region[axis];
    let mid = 0.5 * (alo + ahi);
    let n_class0 = n_target.div_ceil(2);
    let mut classes = Vec::with_capacity(n_target);
    let trange = layout.target_sigma_range.unwrap_or(layout.sigma_range);
    for i in 0..n_target {
        let class = usize::from(i >= n_class0);
        let p = DVector::from_fn(dim, |k, _| {
            let (lo, hi) = layout.target_region[k];
            if k == axis {
                if class == 0 {
                    target_rng.uniform(lo, mid)
                } else {
                    target_rng.uniform(mid, hi)
                }
            } else {
                target_rng.uniform(lo, hi)
            }
        });
        let sigma = draw_sigma(&mut target_rng, trange);
        comps.push(GaussianComponent::isotropic(p, sigma, weight)?);
        classes.push(class);
    }

    let source = GaussianMixture::normalized(comps)?;
    let target_indices = (n_background..n_source).collect();
    DomainWorld::new(source, target_indices, classes, layout.target_prior)
}

/// Serialization form of a world: the source mixture flattened per
/// component plus the target/class structure.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorldFile {
    pub source: MixtureFile,
    pub target_mode_indices: Vec<usize>,
    pub class_partition: Vec<usize>,
    pub target_prior: f64,
}

impl WorldFile {
    pub fn from_world(world: &DomainWorld) -> Self {
        Self {
            source: MixtureFile::from_mixture(&world.source),
            target_mode_indices: world.target_mode_indices.clone(),
            class_partition: world.class_partition.clone(),
            target_prior: world.target_prior,
        }
    }

    pub fn into_world(self) -> Result<DomainWorld> {
        DomainWorld::new(
            self.source.into_mixture()?,
            self.target_mode_indices,
            self.class_partition,
            self.target_prior,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn vec2(a: f64, b: f64) -> DVector<f64> {
        DVector::from_column_slice(&[a, b])
    }

    fn tiny_world() -> DomainWorld {
        // Three source modes; the last two are the target, one per class.
        let comps = vec![
            GaussianComponent::isotropic(vec2(-3.0, 0.0), 0.5, 1.0 / 3.0).unwrap(),
            GaussianComponent::isotropic(vec2(2.0, 1.0), 0.3, 1.0 / 3.0).unwrap(),
            GaussianComponent::isotropic(vec2(2.5, -1.0), 0.4, 1.0 / 3.0).unwrap(),
        ];
        let source = GaussianMixture::normalized(comps).unwrap();
        DomainWorld::new(source, vec![1, 2], vec![0, 1], 0.1).unwrap()
    }

    #[test]
    fn build_world_is_deterministic() {
        let layout = WorldLayout::default_2d();
        let a = build_world(12, 100, 5, 2, &layout).unwrap();
        let b = build_world(12, 100, 5, 2, &layout).unwrap();
        for (x, y) in a.source().components().iter().zip(b.source().components()) {
            assert_eq!(x.mean(), y.mean());
            assert_eq!(x.cov(), y.cov());
        }
        assert_eq!(a.class_partition(), b.class_partition());
    }

    #[test]
    fn build_world_shape_and_placement() {
        let layout = WorldLayout::default_2d();
        let w = build_world(7, 100, 5, 2, &layout).unwrap();
        assert_eq!(w.source().components().len(), 100);
        assert_eq!(w.target_mode_indices().len(), 5);
        assert_eq!(w.class_count(), 2);
        for (&i, &c) in w.target_mode_indices().iter().zip(w.class_partition()) {
            let m = w.source().components()[i].mean();
            for (k, &(lo, hi)) in layout.target_region.iter().enumerate() {
                assert!(m[k] >= lo && m[k] <= hi, "target mode outside region");
            }
            let (alo, ahi) = layout.target_region[layout.class_split_axis];
            let mid = 0.5 * (alo + ahi);
            if c == 0 {
                assert!(m[layout.class_split_axis] <= mid);
            } else {
                assert!(m[layout.class_split_axis] >= mid);
            }
        }
        // Background modes stay out of the inflated region.
        for i in 0..95 {
            let m = w.source().components()[i].mean();
            let inside = layout.target_region.iter().enumerate().all(|(k, &(lo, hi))| {
                m[k] >= lo - layout.margin && m[k] <= hi + layout.margin
            });
            assert!(!inside, "background mode {i} inside inflated region");
        }
    }

    #[test]
    fn build_world_rejects_impossible_layout() {
        let mut layout = WorldLayout::default_2d();
        layout.target_region = vec![(-2.0, 0.5), (0.0, 0.5)];
        assert!(build_world(1, 10, 2, 2, &layout).is_err());

        let mut layout2 = WorldLayout::default_2d();
        layout2.target_region = vec![(-1.0, 1.0), (-1.0, 1.0)];
        assert!(build_world(1, 10, 2, 2, &layout2).is_err());
    }

    #[test]
    fn posterior_grad_is_zero_when_target_equals_source() {
        // Two modes, both in the "target": posterior is constant.
        let comps = vec![
            GaussianComponent::isotropic(vec2(-1.0, 0.0), 0.5, 0.5).unwrap(),
            GaussianComponent::isotropic(vec2(1.0, 0.0), 0.5, 0.5).unwrap(),
        ];
        let source = GaussianMixture::new(comps).unwrap();
        // A strict subset is required, so emulate target == source by a
        // world whose target modes duplicate the source geometry.
        let dup = vec![
            GaussianComponent::isotropic(vec2(-1.0, 0.0), 0.5, 0.25).unwrap(),
            GaussianComponent::isotropic(vec2(1.0, 0.0), 0.5, 0.25).unwrap(),
            GaussianComponent::isotropic(vec2(-1.0, 0.0), 0.5, 0.25).unwrap(),
            GaussianComponent::isotropic(vec2(1.0, 0.0), 0.5, 0.25).unwrap(),
        ];
        let world = DomainWorld::new(
            GaussianMixture::new(dup).unwrap(),
            vec![2, 3],
            vec![0, 1],
            0.5,
        )
        .unwrap();
        drop(source);
        let mut rng = SplitRng::new(4);
        for _ in 0..20 {
            let x = vec2(rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0));
            let g = world.domain_posterior_log_grad(&x, 0.5).unwrap();
            assert!(g.norm() < 1e-10, "grad {g:?}");
        }
    }

    #[test]
    fn posterior_saturates_inside_dense_target_far_from_background() {
        // Background mode extremely far away: near the target, the source
        // density is numerically the (weighted) target density.
        let comps = vec![
            GaussianComponent::isotropic(vec2(500.0, 500.0), 0.5, 0.5).unwrap(),
            GaussianComponent::isotropic(vec2(0.0, 0.0), 0.3, 0.25).unwrap(),
            GaussianComponent::isotropic(vec2(1.0, 0.0), 0.3, 0.25).unwrap(),
        ];
        let world = DomainWorld::new(
            GaussianMixture::new(comps).unwrap(),
            vec![1, 2],
            vec![0, 1],
            0.5,
        )
        .unwrap();
        let g = world
            .domain_posterior_log_grad(&vec2(0.5, 0.0), 1.0 - 1e-9)
            .unwrap();
        assert!(g.norm() < 1e-6, "posterior gradient {g:?} should vanish");
    }

    #[test]
    fn posterior_grad_matches_finite_differences() {
        let world = tiny_world();
        let mut rng = SplitRng::new(21);
        let h = 1e-6;
        for _ in 0..50 {
            let abar = rng.uniform(0.05, 1.0);
            let x = vec2(rng.uniform(-4.0, 4.0), rng.uniform(-3.0, 3.0));
            let g = world.domain_posterior_log_grad(&x, abar).unwrap();
            for k in 0..2 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[k] += h;
                xm[k] -= h;
                let fp = world.log_posterior_unnormalized(&xp, abar).unwrap();
                let fm = world.log_posterior_unnormalized(&xm, abar).unwrap();
                let fd = (fp - fm) / (2.0 * h);
                assert_relative_eq!(g[k], fd, max_relative = 1e-6, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn posterior_grad_equals_score_difference_exactly() {
        let world = tiny_world();
        let mut rng = SplitRng::new(33);
        for _ in 0..25 {
            let abar = rng.uniform(0.1, 1.0);
            let x = vec2(rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0));
            let g = world.domain_posterior_log_grad(&x, abar).unwrap();
            let s_tgt = world
                .target_mixture()
                .noised_marginal(abar)
                .unwrap()
                .score(&x)
                .unwrap();
            let s_src = world.source().noised_marginal(abar).unwrap().score(&x).unwrap();
            let resid = (&g - (s_tgt - s_src)).norm();
            assert!(resid < 1e-12);
        }
    }

    #[test]
    fn class_mixtures_partition_target() {
        let w = build_world(3, 20, 5, 2, &WorldLayout::default_2d()).unwrap();
        let c0 = w.class_mixture(0).unwrap();
        let c1 = w.class_mixture(1).unwrap();
        assert_eq!(c0.components().len() + c1.components().len(), 5);
        assert!(w.class_mixture(7).is_err());
    }

    #[test]
    fn world_json_round_trip() {
        let w = build_world(9, 30, 4, 2, &WorldLayout::default_2d()).unwrap();
        let dir = std::env::temp_dir().join("dog_core_world_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("world.json");
        w.save_json(&path).unwrap();
        let back = DomainWorld::load_json(&path).unwrap();
        for (a, b) in w.source().components().iter().zip(back.source().components()) {
            assert_eq!(a.mean(), b.mean());
            assert_eq!(a.cov(), b.cov());
            assert_eq!(a.weight(), b.weight());
        }
        assert_eq!(w.target_mode_indices(), back.target_mode_indices());
        assert_eq!(w.class_partition(), back.class_partition());
        assert_eq!(w.target_prior(), back.target_prior());
        std::fs::remove_file(&path).ok();
    }
}
