//! Dataset ingestion, standardization, stratified splitting, and synthetic
//! one-dimensional Bernoulli generators.
//!
//! Files are plain comma-delimited text with the label in the last column by
//! default (or in a named column when a header is present). String labels are
//! mapped to indices in order of first appearance and the mapping is kept on
//! the [`Dataset`] so saved files stay human-readable. Standardization always
//! uses *training* statistics with the population standard deviation, so a
//! given train/test pair standardizes the same way every time.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{GpdError, Result};
use crate::math::stream_rng;

/// A labelled dataset: `n` rows of `d` features plus one class index each.
#[derive(Debug, Clone)]
pub struct Dataset {
    /// Feature matrix, one row per observation.
    pub x: Array2<f64>,
    /// Class index per row, each in `0..num_classes`.
    pub y: Vec<usize>,
    /// Number of classes. May exceed `max(y)+1` when a split dropped a class.
    pub num_classes: usize,
    /// Human-readable name used in output files.
    pub name: String,
    /// For synthetic data: the generating class-1 probability per row.
    pub true_prob: Option<Array1<f64>>,
    /// Original label strings when the source file used non-integer labels,
    /// indexed by class.
    pub label_names: Option<Vec<String>>,
}

impl Dataset {
    /// Build a dataset and check its invariants: row/label counts agree,
    /// every label is in range, and no feature is NaN.
    pub fn new(
        x: Array2<f64>,
        y: Vec<usize>,
        num_classes: usize,
        name: impl Into<String>,
    ) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(GpdError::Input(format!(
                "feature rows ({}) and label count ({}) differ",
                x.nrows(),
                y.len()
            )));
        }
        if num_classes < 2 {
            return Err(GpdError::Input(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        if let Some(&bad) = y.iter().find(|&&c| c >= num_classes) {
            return Err(GpdError::Input(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        if x.iter().any(|v| v.is_nan()) {
            return Err(GpdError::Input("features contain NaN".into()));
        }
        Ok(Self {
            x,
            y,
            num_classes,
            name: name.into(),
            true_prob: None,
            label_names: None,
        })
    }

    /// Number of observations.
    pub fn len(&self) -> usize {
        self.y.len()
    }

    /// Whether the dataset holds no rows.
    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Copy of the rows at `indices`, carrying class metadata and any
    /// per-row generating probabilities along.
    pub fn subset(&self, indices: &[usize], name: impl Into<String>) -> Self {
        let d = self.x.ncols();
        let mut x = Array2::zeros((indices.len(), d));
        let mut y = Vec::with_capacity(indices.len());
        for (row, &i) in indices.iter().enumerate() {
            x.row_mut(row).assign(&self.x.row(i));
            y.push(self.y[i]);
        }
        let true_prob = self
            .true_prob
            .as_ref()
            .map(|p| indices.iter().map(|&i| p[i]).collect());
        Self {
            x,
            y,
            num_classes: self.num_classes,
            name: name.into(),
            true_prob,
            label_names: self.label_names.clone(),
        }
    }
}

/// Which column of a delimited file holds the class label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelColumn {
    /// The last column (works with or without a header row).
    Last,
    /// The column with this header name (requires a header row).
    Named(String),
}

/// Read a comma-delimited dataset from `path`.
///
/// The first row is treated as a header when any non-label field in it fails
/// to parse as a number. Labels may be integers (used directly, classes
/// `0..=max`) or arbitrary strings (mapped to indices by first appearance;
/// the mapping is recorded on the result). Missing values are an error —
/// there is deliberately no imputation.
pub fn load_csv(path: impl AsRef<Path>, label_column: &LabelColumn) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    parse_csv(&text, label_column, &name)
}

/// Parse CSV text already in memory; see [`load_csv`] for the format rules.
pub fn parse_csv(text: &str, label_column: &LabelColumn, name: &str) -> Result<Dataset> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (first_no, first) = lines
        .next()
        .ok_or_else(|| GpdError::Parse(format!("{name}: file has no data rows")))?;
    let first_fields: Vec<&str> = first.split(',').map(str::trim).collect();
    let width = first_fields.len();
    if width < 2 {
        return Err(GpdError::Parse(format!(
            "{name}: row {first_no} has {width} fields; need at least one feature and a label"
        )));
    }

    // Locate the label column and decide whether the first row is a header:
    // a header row has a non-numeric field somewhere other than the label.
    let (label_idx, has_header) = match label_column {
        LabelColumn::Last => {
            let idx = width - 1;
            let header = first_fields
                .iter()
                .enumerate()
                .any(|(i, f)| i != idx && f.parse::<f64>().is_err());
            (idx, header)
        }
        LabelColumn::Named(col) => {
            let idx = first_fields
                .iter()
                .position(|f| f == col)
                .ok_or_else(|| {
                    GpdError::Parse(format!("{name}: no column named {col:?} in header row"))
                })?;
            (idx, true)
        }
    };

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels_raw: Vec<String> = Vec::new();
    let mut parse_row = |line_no: usize, line: &str| -> Result<()> {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != width {
            return Err(GpdError::Parse(format!(
                "{name}: row {line_no} has {} fields, expected {width}",
                fields.len()
            )));
        }
        let mut features = Vec::with_capacity(width - 1);
        for (i, field) in fields.iter().enumerate() {
            if i == label_idx {
                if field.is_empty() {
                    return Err(GpdError::Parse(format!(
                        "{name}: row {line_no} has an empty label"
                    )));
                }
                labels_raw.push((*field).to_string());
            } else {
                if field.is_empty() {
                    return Err(GpdError::Parse(format!(
                        "{name}: row {line_no} has a missing value in column {}",
                        i + 1
                    )));
                }
                let v: f64 = field.parse().map_err(|_| {
                    GpdError::Parse(format!(
                        "{name}: row {line_no} column {}: {field:?} is not a number",
                        i + 1
                    ))
                })?;
                features.push(v);
            }
        }
        rows.push(features);
        Ok(())
    };

    if !has_header {
        parse_row(first_no, first)?;
    }
    for (line_no, line) in lines {
        parse_row(line_no, line)?;
    }
    if rows.is_empty() {
        return Err(GpdError::Parse(format!("{name}: file has no data rows")));
    }

    // Integer labels keep their own numbering; anything else is mapped by
    // first appearance.
    let all_integer = labels_raw.iter().all(|l| l.parse::<usize>().is_ok());
    let (y, num_classes, label_names) = if all_integer {
        let y: Vec<usize> = labels_raw.iter().map(|l| l.parse().unwrap()).collect();
        let c = y.iter().copied().max().unwrap_or(0) + 1;
        (y, c.max(2), None)
    } else {
        let mut names: Vec<String> = Vec::new();
        let mut y = Vec::with_capacity(labels_raw.len());
        for label in &labels_raw {
            let idx = match names.iter().position(|n| n == label) {
                Some(i) => i,
                None => {
                    names.push(label.clone());
                    names.len() - 1
                }
            };
            y.push(idx);
        }
        let c = names.len().max(2);
        (y, c, Some(names))
    };

    let d = width - 1;
    let mut x = Array2::zeros((rows.len(), d));
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            x[[i, j]] = v;
        }
    }
    let mut data = Dataset::new(x, y, num_classes, name)?;
    data.label_names = label_names;
    Ok(data)
}

/// Write `data` as CSV with a `f0,...,label` header. Floats are printed with
/// 17 significant digits so [`load_csv`] recovers them bit-for-bit.
pub fn save_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    for j in 0..data.x.ncols() {
        out.push_str(&format!("f{j},"));
    }
    out.push_str("label\n");
    for i in 0..data.len() {
        for j in 0..data.x.ncols() {
            out.push_str(&format!("{:e},", FullPrecision(data.x[[i, j]])));
        }
        match &data.label_names {
            Some(names) => out.push_str(&names[data.y[i]]),
            None => out.push_str(&data.y[i].to_string()),
        }
        out.push('\n');
    }
    std::fs::write(path.as_ref(), out)?;
    Ok(())
}

/// Wrapper whose `LowerExp` impl prints 17 significant digits, enough to
/// round-trip any f64 through text exactly.
pub struct FullPrecision(pub f64);

impl std::fmt::LowerExp for FullPrecision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.16e}", self.0)
    }
}

/// Per-feature centering and scaling statistics computed from training data.
#[derive(Debug, Clone)]
pub struct Standardization {
    /// Training mean per feature.
    pub mean: Array1<f64>,
    /// Training population standard deviation per feature; exactly 1 where
    /// the feature was constant.
    pub sd: Array1<f64>,
}

impl Standardization {
    /// Compute statistics from a non-empty training matrix.
    pub fn fit(x: ArrayView2<f64>) -> Result<Self> {
        let n = x.nrows();
        if n == 0 {
            return Err(GpdError::Input(
                "cannot standardize from an empty training set".into(),
            ));
        }
        let d = x.ncols();
        let mut mean = Array1::zeros(d);
        let mut sd = Array1::zeros(d);
        for j in 0..d {
            let col = x.column(j);
            let m = col.sum() / n as f64;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
            mean[j] = m;
            let s = var.sqrt();
            sd[j] = if s > 0.0 { s } else { 1.0 };
        }
        Ok(Self { mean, sd })
    }

    /// Apply the training statistics to any matrix with the same width.
    pub fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for mut row in out.rows_mut() {
            for j in 0..row.len() {
                row[j] = (row[j] - self.mean[j]) / self.sd[j];
            }
        }
        out
    }
}

/// Standardize `train` by its own statistics and apply the same statistics
/// to every dataset in `others` (typically calibration and test splits).
pub fn standardize(
    train: &Dataset,
    others: &[&Dataset],
) -> Result<(Dataset, Vec<Dataset>, Standardization)> {
    let stats = Standardization::fit(train.x.view())?;
    let mut std_train = train.clone();
    std_train.x = stats.apply(train.x.view());
    let std_others = others
        .iter()
        .map(|d| {
            let mut out = (*d).clone();
            out.x = stats.apply(d.x.view());
            out
        })
        .collect();
    Ok((std_train, std_others, stats))
}

/// How to carve one dataset into train / calibration / test partitions.
#[derive(Debug, Clone, Copy)]
pub struct SplitSpec {
    /// Fraction of all rows reserved for the test set, in (0, 1).
    pub test_fraction: f64,
    /// Fraction of the *training remainder* reserved for calibration, in
    /// [0, 1). Zero yields an empty calibration set.
    pub calibration_fraction: f64,
    /// Base RNG seed shared by all replicates of an experiment.
    pub seed: u64,
    /// Replicate number; each value produces an independent shuffle.
    pub replicate_index: u64,
}

impl SplitSpec {
    fn validate(&self) -> Result<()> {
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(GpdError::Input(format!(
                "test_fraction must lie in (0,1), got {}",
                self.test_fraction
            )));
        }
        if !(0.0..1.0).contains(&self.calibration_fraction) {
            return Err(GpdError::Input(format!(
                "calibration_fraction must lie in [0,1), got {}",
                self.calibration_fraction
            )));
        }
        if self.test_fraction + self.calibration_fraction >= 1.0 {
            return Err(GpdError::Input(format!(
                "test_fraction {} + calibration_fraction {} must stay below 1",
                self.test_fraction, self.calibration_fraction
            )));
        }
        Ok(())
    }
}

/// The three partitions produced by [`split`].
#[derive(Debug, Clone)]
pub struct Split {
    pub train: Dataset,
    pub calibration: Dataset,
    pub test: Dataset,
}

/// Label-stratified train / calibration / test split, deterministic in
/// `(seed, replicate_index)`.
///
/// Each class contributes to the test set in proportion to its frequency;
/// fractional shares are settled by largest remainder so the total test
/// count is exactly `round(n * test_fraction)`. The calibration set is then
/// carved out of the training remainder the same way. Errors if any class
/// would vanish from the training partition.
pub fn split(data: &Dataset, spec: &SplitSpec) -> Result<Split> {
    spec.validate()?;
    let n = data.len();
    if n == 0 {
        return Err(GpdError::Input("cannot split an empty dataset".into()));
    }
    let mut rng = stream_rng(spec.seed, spec.replicate_index);

    // Shuffle within each class so the largest-remainder draw below picks
    // uniformly among that class's rows.
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); data.num_classes];
    for (i, &c) in data.y.iter().enumerate() {
        by_class[c].push(i);
    }
    for group in &mut by_class {
        group.shuffle(&mut rng);
    }

    let test_total = ((n as f64) * spec.test_fraction).round() as usize;
    let test_counts = largest_remainder(&by_class, spec.test_fraction, test_total);
    let mut test_idx = Vec::with_capacity(test_total);
    let mut pool: Vec<Vec<usize>> = Vec::with_capacity(by_class.len());
    for (group, &take) in by_class.iter().zip(&test_counts) {
        test_idx.extend_from_slice(&group[..take]);
        pool.push(group[take..].to_vec());
    }

    let pool_total: usize = pool.iter().map(Vec::len).sum();
    let cal_total = ((pool_total as f64) * spec.calibration_fraction).round() as usize;
    let cal_counts = largest_remainder(&pool, spec.calibration_fraction, cal_total);
    let mut cal_idx = Vec::with_capacity(cal_total);
    let mut train_idx = Vec::new();
    for (c, (group, &take)) in pool.iter().zip(&cal_counts).enumerate() {
        cal_idx.extend_from_slice(&group[..take]);
        let rest = &group[take..];
        if rest.is_empty() && !by_class[c].is_empty() {
            return Err(GpdError::Input(format!(
                "class {c} has no rows left for training under this split"
            )));
        }
        train_idx.extend_from_slice(rest);
    }

    // Deterministic row order independent of the class-bucket walk above.
    train_idx.sort_unstable();
    cal_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok(Split {
        train: data.subset(&train_idx, format!("{}_train", data.name)),
        calibration: data.subset(&cal_idx, format!("{}_cal", data.name)),
        test: data.subset(&test_idx, format!("{}_test", data.name)),
    })
}

/// Allocate `total` draws across class groups proportionally to group size,
/// flooring each share and then handing out the shortfall in order of
/// largest fractional remainder (ties to the lower class index).
fn largest_remainder(groups: &[Vec<usize>], fraction: f64, total: usize) -> Vec<usize> {
    let mut counts: Vec<usize> = Vec::with_capacity(groups.len());
    let mut remainders: Vec<(f64, usize)> = Vec::with_capacity(groups.len());
    for (c, group) in groups.iter().enumerate() {
        let share = group.len() as f64 * fraction;
        let floor = (share.floor() as usize).min(group.len());
        counts.push(floor);
        remainders.push((share - floor as f64, c));
    }
    let mut assigned: usize = counts.iter().sum();
    remainders.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let mut cursor = 0;
    while assigned < total && cursor < remainders.len() {
        let c = remainders[cursor].1;
        if counts[c] < groups[c].len() {
            counts[c] += 1;
            assigned += 1;
        }
        cursor += 1;
        if cursor == remainders.len() && assigned < total {
            // All remainders consumed once; keep cycling over classes that
            // still have capacity (only reachable with extreme fractions).
            cursor = 0;
            if counts.iter().zip(groups).all(|(c, g)| *c == g.len()) {
                break;
            }
        }
    }
    counts
}

/// Built-in class-1 probability curves for [`synth_bernoulli_1d`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProbabilityCurve {
    /// Smooth curve 0.5 + 0.45·sin(2x): probabilities sweep [0.05, 0.95].
    Sinusoid,
    /// Discontinuous curve: 0.8 for x < 0, 0.2 otherwise.
    Step,
    /// Square wave 0.8 where sin(2x) ≥ 0, 0.2 elsewhere: the step curve's
    /// levels but with several jumps, so smoothing misallocates confidence
    /// around every transition.
    Square,
    /// Constant probability everywhere (handy for degenerate checks).
    Constant(f64),
}

impl ProbabilityCurve {
    /// Class-1 probability at `x`.
    pub fn evaluate(&self, x: f64) -> f64 {
        match self {
            Self::Sinusoid => 0.5 + 0.45 * (2.0 * x).sin(),
            Self::Step => {
                if x < 0.0 {
                    0.8
                } else {
                    0.2
                }
            }
            Self::Square => {
                if (2.0 * x).sin() >= 0.0 {
                    0.8
                } else {
                    0.2
                }
            }
            Self::Constant(p) => *p,
        }
    }

    /// Short name used in dataset labels and output files.
    pub fn label(&self) -> String {
        match self {
            Self::Sinusoid => "sinusoid".to_string(),
            Self::Step => "step".to_string(),
            Self::Square => "square".to_string(),
            Self::Constant(p) => format!("const{p}"),
        }
    }
}

/// Interval the synthetic inputs are drawn from, uniform on [−3, 3].
pub const SYNTH_INPUT_RANGE: (f64, f64) = (-3.0, 3.0);

/// One-dimensional binary dataset: inputs uniform on [−3, 3], labels drawn
/// Bernoulli(curve(x)). The generating probabilities are retained on the
/// dataset so downstream code can score mean-squared error against truth.
pub fn synth_bernoulli_1d(n: usize, curve: ProbabilityCurve, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(GpdError::Input("need at least one synthetic row".into()));
    }
    let mut rng = stream_rng(seed, 0);
    let mut x = Array2::zeros((n, 1));
    let mut y = Vec::with_capacity(n);
    let mut prob = Array1::zeros(n);
    for i in 0..n {
        let xi = rng.random_range(SYNTH_INPUT_RANGE.0..SYNTH_INPUT_RANGE.1);
        let p = curve.evaluate(xi).clamp(0.0, 1.0);
        x[[i, 0]] = xi;
        prob[i] = p;
        y.push(usize::from(rng.random::<f64>() < p));
    }
    let mut data = Dataset::new(x, y, 2, format!("synth_bernoulli_1d_{}", curve.label()))?;
    data.true_prob = Some(prob);
    Ok(data)
}
