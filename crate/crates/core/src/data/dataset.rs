use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::rng::RngStream;

use super::shapes::{gen_shape, ShapeFamily, ShapeSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub clouds: Vec<PointCloud>,
    pub num_classes: usize,
    pub num_parts: usize,
    /// Part ids owned by each class.
    pub class_parts: Vec<Vec<usize>>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Dataset {
    /// Builds a dataset from separately stored train and test clouds.
    pub fn from_splits(
        name: impl Into<String>,
        train: Vec<PointCloud>,
        test: Vec<PointCloud>,
        num_classes: usize,
        num_parts: usize,
    ) -> Result<Self> {
        let n_train = train.len();
        let clouds: Vec<PointCloud> = train.into_iter().chain(test).collect();
        let class_parts = infer_class_parts(&clouds, num_classes);
        let ds = Self {
            name: name.into(),
            train: (0..n_train).collect(),
            test: (n_train..clouds.len()).collect(),
            clouds,
            num_classes,
            num_parts,
            class_parts,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.clouds.is_empty() {
            return Err(Error::invalid("dataset is empty"));
        }
        for (i, c) in self.clouds.iter().enumerate() {
            if c.class_label().is_some_and(|l| l >= self.num_classes) {
                return Err(Error::invalid(format!(
                    "cloud {i} class label out of range"
                )));
            }
            if c.point_labels()
                .is_some_and(|p| p.iter().any(|&l| l >= self.num_parts))
            {
                return Err(Error::invalid(format!("cloud {i} part label out of range")));
            }
        }
        let mut seen = vec![false; self.clouds.len()];
        for &i in self.train.iter().chain(&self.test) {
            if i >= seen.len() || std::mem::replace(&mut seen[i], true) {
                return Err(Error::invalid(
                    "splits must be disjoint index lists into the dataset",
                ));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::invalid("splits must cover the dataset"));
        }
        Ok(())
    }

    pub fn train_clouds(&self) -> Vec<PointCloud> {
        self.train.iter().map(|&i| self.clouds[i].clone()).collect()
    }

    pub fn test_clouds(&self) -> Vec<PointCloud> {
        self.test.iter().map(|&i| self.clouds[i].clone()).collect()
    }
}

/// Parts seen with each class, sorted.
pub fn infer_class_parts(clouds: &[PointCloud], num_classes: usize) -> Vec<Vec<usize>> {
    let mut parts: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for c in clouds {
        if let (Some(cls), Some(labels)) = (c.class_label(), c.point_labels()) {
            if let Some(list) = parts.get_mut(cls) {
                list.extend_from_slice(labels);
            }
        }
    }
    for list in &mut parts {
        list.sort_unstable();
        list.dedup();
    }
    parts
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub families: Vec<ShapeFamily>,
    pub per_class: usize,
    pub num_points: usize,
    /// Fraction of each class placed in the training split.
    pub split: f64,
    pub size_jitter: f64,
    pub rotation_jitter: f64,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            families: ShapeFamily::ALL.to_vec(),
            per_class: 250,
            num_points: 256,
            split: 0.8,
            size_jitter: 0.15,
            rotation_jitter: 180.0,
            seed: 0,
        }
    }
}

/// Class labels are positions in `families`; each class owns a contiguous
/// block of part ids. Splits are stratified per class.
pub fn build_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    if !(spec.split > 0.0 && spec.split < 1.0) {
        return Err(Error::config(format!(
            "split fraction {} outside (0, 1)",
            spec.split
        )));
    }
    if spec.families.is_empty() {
        return Err(Error::config("no shape families given"));
    }
    if spec.per_class < 2 {
        return Err(Error::config("need at least 2 samples per class"));
    }
    for (i, f) in spec.families.iter().enumerate() {
        if spec.families[..i].contains(f) {
            return Err(Error::config(format!("family {f} listed twice")));
        }
    }
    let mut rng = RngStream::new(spec.seed).substream("data");
    let n_train =
        ((spec.per_class as f64 * spec.split).round() as usize).clamp(1, spec.per_class - 1);

    let mut clouds = Vec::with_capacity(spec.families.len() * spec.per_class);
    let mut class_parts = Vec::with_capacity(spec.families.len());
    let (mut train, mut test) = (Vec::new(), Vec::new());
    let mut part_offset = 0;
    for (class, &family) in spec.families.iter().enumerate() {
        let shape = ShapeSpec {
            family,
            size_jitter: spec.size_jitter,
            rotation_jitter: spec.rotation_jitter,
            num_points: spec.num_points,
        };
        let base = clouds.len();
        for _ in 0..spec.per_class {
            let c = gen_shape(&shape, &mut rng)?;
            let parts: Vec<usize> = c
                .point_labels()
                .expect("generated")
                .iter()
                .map(|p| p + part_offset)
                .collect();
            clouds.push(PointCloud::new(
                c.points().to_vec(),
                Some(class),
                Some(parts),
            )?);
        }
        let mut order: Vec<usize> = (base..base + spec.per_class).collect();
        rng.shuffle(&mut order);
        train.extend_from_slice(&order[..n_train]);
        test.extend_from_slice(&order[n_train..]);
        class_parts.push((part_offset..part_offset + family.num_parts()).collect());
        part_offset += family.num_parts();
    }
    train.sort_unstable();
    test.sort_unstable();
    let name = spec
        .families
        .iter()
        .map(|f| f.as_str())
        .collect::<Vec<_>>()
        .join("+");
    let ds = Dataset {
        name,
        clouds,
        num_classes: spec.families.len(),
        num_parts: part_offset,
        class_parts,
        train,
        test,
    };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DatasetSpec {
        DatasetSpec {
            per_class: 10,
            num_points: 16,
            ..DatasetSpec::default()
        }
    }

    #[test]
    fn stratified_counts() {
        let ds = build_dataset(&DatasetSpec {
            num_points: 8,
            ..DatasetSpec::default()
        })
        .unwrap();
        assert_eq!((ds.train.len(), ds.test.len()), (800, 200));
        for class in 0..4 {
            let tr = ds
                .train
                .iter()
                .filter(|&&i| ds.clouds[i].class_label() == Some(class))
                .count();
            let te = ds
                .test
                .iter()
                .filter(|&&i| ds.clouds[i].class_label() == Some(class))
                .count();
            assert_eq!((tr, te), (200, 50));
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(
            build_dataset(&small()).unwrap(),
            build_dataset(&small()).unwrap()
        );
        let other = build_dataset(&DatasetSpec { seed: 1, ..small() }).unwrap();
        assert_ne!(build_dataset(&small()).unwrap(), other);
    }

    #[test]
    fn splits_partition_indices() {
        let ds = build_dataset(&small()).unwrap();
        let mut all: Vec<usize> = ds.train.iter().chain(&ds.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..ds.clouds.len()).collect::<Vec<_>>());
    }

    #[test]
    fn bad_split_is_config_error() {
        for split in [0.0, 1.0, -0.5, 1.5] {
            let err = build_dataset(&DatasetSpec { split, ..small() }).unwrap_err();
            assert!(matches!(err, Error::Config(_)));
        }
    }

    #[test]
    fn part_blocks_per_class() {
        let ds = build_dataset(&small()).unwrap();
        assert_eq!(ds.num_parts, 9);
        assert_eq!(
            ds.class_parts,
            vec![vec![0, 1], vec![2, 3, 4], vec![5, 6], vec![7, 8]]
        );
        assert_eq!(infer_class_parts(&ds.clouds, 4), ds.class_parts);
    }

    #[test]
    fn single_family_relabels_to_zero() {
        let ds = build_dataset(&DatasetSpec {
            families: vec![ShapeFamily::Cylinder],
            ..small()
        })
        .unwrap();
        assert!(ds.clouds.iter().all(|c| c.class_label() == Some(0)));
        assert_eq!(ds.class_parts, vec![vec![0, 1]]);
    }
}
