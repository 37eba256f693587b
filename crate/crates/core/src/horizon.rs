use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Sorted, deduplicated set of positive lead times (months).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HorizonSet(Vec<usize>);

impl HorizonSet {
    pub fn new(horizons: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut hs: Vec<usize> = horizons.into_iter().collect();
        if hs.is_empty() {
            return Err(Error::InvalidArgument("horizon set is empty".into()));
        }
        if hs.contains(&0) {
            return Err(Error::InvalidArgument("horizons must be positive".into()));
        }
        hs.sort_unstable();
        hs.dedup();
        Ok(Self(hs))
    }

    /// Largest horizon, `H_max`.
    pub fn max(&self) -> usize {
        *self.0.last().expect("non-empty by construction")
    }

    pub fn min(&self) -> usize {
        self.0[0]
    }

    pub fn contains(&self, h: usize) -> bool {
        self.0.binary_search(&h).is_ok()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Ascending.
    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn iter(&self) -> impl DoubleEndedIterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    /// Scalar horizon encoding `h / H_max`.
    pub fn encode(&self, h: usize) -> f64 {
        h as f64 / self.max() as f64
    }

    /// Same set without its largest member, or `None` for a singleton.
    pub fn without_max(&self) -> Option<Self> {
        (self.0.len() > 1).then(|| Self(self.0[..self.0.len() - 1].to_vec()))
    }

    /// Number of training pairs one trajectory of length `steps` yields.
    pub fn pair_count(&self, steps: usize) -> usize {
        self.0.iter().map(|&h| steps.saturating_sub(h)).sum()
    }
}

impl fmt::Display for HorizonSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(usize::to_string).collect();
        write!(f, "{{{}}}", parts.join(","))
    }
}

impl FromStr for HorizonSet {
    type Err = Error;

    /// Parses `"1,15"` or `"{1,15}"`.
    fn from_str(s: &str) -> Result<Self> {
        let inner = s.trim().trim_start_matches('{').trim_end_matches('}');
        let hs = inner
            .split(',')
            .map(|p| p.trim())
            .filter(|p| !p.is_empty())
            .map(|p| {
                p.parse::<usize>()
                    .map_err(|_| Error::InvalidArgument(format!("bad horizon '{p}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(hs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sorted_and_deduplicated() {
        let h = HorizonSet::new([15, 1, 15, 30]).unwrap();
        assert_eq!(h.as_slice(), &[1, 15, 30]);
        assert_eq!(h.max(), 30);
        assert_eq!(h.encode(30), 1.0);
        assert_eq!(h.encode(15), 0.5);
    }

    #[test]
    fn rejects_empty_and_zero() {
        assert!(HorizonSet::new([]).is_err());
        assert!(HorizonSet::new([0, 1]).is_err());
    }

    #[test]
    fn parse_and_display() {
        let h: HorizonSet = "{1, 6,15}".parse().unwrap();
        assert_eq!(h.to_string(), "{1,6,15}");
        assert_eq!("1,15".parse::<HorizonSet>().unwrap().as_slice(), &[1, 15]);
        assert!("1,x".parse::<HorizonSet>().is_err());
    }

    #[test]
    fn pair_count_closed_form() {
        let h = HorizonSet::new([1, 15, 30]).unwrap();
        assert_eq!(h.pair_count(240), 239 + 225 + 210);
    }
}
