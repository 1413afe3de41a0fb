use crate::error::{Error, Result};
use crate::sparse::DenseMatrix;

/// Multi-channel image stored only on its active sites.
///
/// Sites are kept in row-major order with a per-row offset table, like a CSR
/// pattern. Values are site-major (`values[site * channels + c]`); every
/// pixel off the active mask is exactly zero by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    row_ptr: Vec<usize>,
    rows: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<f64>,
}

impl FeatureMap {
    /// Creates a map over `sites` (any order, duplicates rejected) with the
    /// given site-major values.
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        mut sites: Vec<(usize, usize)>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if values.len() != sites.len() * channels {
            return Err(Error::DimensionMismatch {
                expected: sites.len() * channels,
                found: values.len(),
            });
        }
        if let Some(&(i, j)) = sites.iter().find(|&&(i, j)| i >= height || j >= width) {
            return Err(Error::IndexOutOfRange {
                row: i,
                col: j,
                n_rows: height,
                n_cols: width,
            });
        }
        let already_sorted = sites.windows(2).all(|w| w[0] < w[1]);
        let values = if already_sorted {
            values
        } else {
            let mut order: Vec<usize> = (0..sites.len()).collect();
            order.sort_by_key(|&k| sites[k]);
            if order.windows(2).any(|w| sites[w[0]] == sites[w[1]]) {
                return Err(Error::InvalidArgument("duplicate active site".into()));
            }
            let v = order
                .iter()
                .flat_map(|&k| values[k * channels..(k + 1) * channels].iter().copied())
                .collect();
            sites = order.iter().map(|&k| sites[k]).collect();
            v
        };
        Ok(Self::from_sorted_sites(
            channels, height, width, &sites, values,
        ))
    }

    /// `sites` must be sorted row-major and unique.
    pub(crate) fn from_sorted_sites(
        channels: usize,
        height: usize,
        width: usize,
        sites: &[(usize, usize)],
        values: Vec<f64>,
    ) -> Self {
        let mut row_ptr = vec![0; height + 1];
        for &(i, _) in sites {
            row_ptr[i + 1] += 1;
        }
        for i in 0..height {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self {
            channels,
            height,
            width,
            row_ptr,
            rows: sites.iter().map(|s| s.0).collect(),
            cols: sites.iter().map(|s| s.1).collect(),
            values,
        }
    }

    /// Same pattern, new channel count, all zeros.
    pub(crate) fn zeros_on_pattern(&self, channels: usize) -> Self {
        Self {
            channels,
            values: vec![0.0; self.n_sites() * channels],
            ..self.clone_pattern()
        }
    }

    fn clone_pattern(&self) -> Self {
        Self {
            channels: 0,
            height: self.height,
            width: self.width,
            row_ptr: self.row_ptr.clone(),
            rows: self.rows.clone(),
            cols: self.cols.clone(),
            values: Vec::new(),
        }
    }

    pub(crate) fn with_values(&self, channels: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), self.n_sites() * channels);
        Self {
            channels,
            values,
            ..self.clone_pattern()
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn n_sites(&self) -> usize {
        self.cols.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn site(&self, s: usize) -> (usize, usize) {
        (self.rows[s], self.cols[s])
    }

    pub fn sites(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.rows.iter().copied().zip(self.cols.iter().copied())
    }

    /// Channel values at site `s`.
    pub fn site_values(&self, s: usize) -> &[f64] {
        &self.values[s * self.channels..(s + 1) * self.channels]
    }

    pub fn site_index(&self, i: usize, j: usize) -> Option<usize> {
        if i >= self.height {
            return None;
        }
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.cols[a..b].binary_search(&j).ok().map(|k| a + k)
    }

    /// Signed-offset lookup; `None` outside the image or off the mask.
    pub(crate) fn site_at(&self, i: isize, j: isize) -> Option<usize> {
        if i < 0 || j < 0 || j as usize >= self.width {
            return None;
        }
        self.site_index(i as usize, j as usize)
    }

    pub fn is_active(&self, i: usize, j: usize) -> bool {
        self.site_index(i, j).is_some()
    }

    pub fn get(&self, c: usize, i: usize, j: usize) -> f64 {
        self.site_index(i, j)
            .map_or(0.0, |s| self.values[s * self.channels + c])
    }

    /// Dense copy of one channel.
    pub fn channel_dense(&self, c: usize) -> Result<DenseMatrix> {
        let mut d = DenseMatrix::zeros(self.height, self.width)?;
        for (s, (i, j)) in self.sites().enumerate() {
            d.set(i, j, self.values[s * self.channels + c]);
        }
        Ok(d)
    }

    pub fn density(&self) -> f64 {
        self.n_sites() as f64 / (self.height as f64 * self.width as f64)
    }
}

/// Pixels reachable from `map`'s mask by `steps` one-pixel down/right
/// dilations, i.e. the `(steps+1) x (steps+1)` window anchored at each site.
pub fn dilate_down_right(map: &FeatureMap, steps: usize) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = map
        .sites()
        .flat_map(|(i, j)| (0..=steps).flat_map(move |a| (0..=steps).map(move |b| (i + a, j + b))))
        .filter(|&(i, j)| i < map.height && j < map.width)
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// Whether every active site of `inner` lies in the `steps`-dilation of
/// `outer`'s mask.
pub fn support_within_dilation(inner: &FeatureMap, outer: &FeatureMap, steps: usize) -> bool {
    inner.sites().all(|(i, j)| {
        (0..=steps.min(i)).any(|a| (0..=steps.min(j)).any(|b| outer.is_active(i - a, j - b)))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unsorted_sites_are_canonicalised() {
        let m = FeatureMap::new(2, 3, 3, vec![(2, 1), (0, 0)], vec![5.0, 6.0, 1.0, 2.0]).unwrap();
        assert_eq!(m.site(0), (0, 0));
        assert_eq!(m.get(1, 0, 0), 2.0);
        assert_eq!(m.get(0, 2, 1), 5.0);
        assert_eq!(m.get(0, 1, 1), 0.0);
        assert!(!m.is_active(1, 1));
        assert!(FeatureMap::new(1, 2, 2, vec![(1, 1), (1, 1)], vec![1.0, 2.0]).is_err());
        assert!(FeatureMap::new(1, 2, 2, vec![(2, 0)], vec![1.0]).is_err());
    }

    #[test]
    fn dilation_window() {
        let m = FeatureMap::new(1, 6, 6, vec![(1, 1)], vec![1.0]).unwrap();
        let d = dilate_down_right(&m, 4);
        assert_eq!(d.len(), 25);
        assert!(d.contains(&(5, 5)) && !d.contains(&(0, 0)));
        let corner = FeatureMap::new(1, 6, 6, vec![(4, 4)], vec![1.0]).unwrap();
        assert_eq!(dilate_down_right(&corner, 4).len(), 4);
    }
}
