//! The 14-channel montage, the five frequency bands, and the fixed
//! left/right global-connection pairs.

use std::fmt;
use std::str::FromStr;

/// Signal channels in the canonical (file and matrix row) order.
pub const CHANNELS: [&str; 14] = [
    "AF3", "F7", "F3", "FC5", "T7", "P7", "O1", "O2", "P8", "T8", "FC6", "F4", "F8", "AF4",
];

pub const N_CHANNELS: usize = CHANNELS.len();
pub const N_BANDS: usize = 5;

/// Hemispheric pairs whose initial adjacency is shifted into [-1, 0].
pub const GLOBAL_PAIRS: [(&str, &str); 4] =
    [("AF3", "AF4"), ("FC5", "FC6"), ("P7", "P8"), ("O1", "O2")];

/// Row index of a channel name in [`CHANNELS`].
pub fn channel_index(name: &str) -> Option<usize> {
    CHANNELS.iter().position(|c| *c == name)
}

/// Index pairs `(i, j)` with `i < j` for [`GLOBAL_PAIRS`].
pub fn global_pair_indices() -> [(usize, usize); 4] {
    GLOBAL_PAIRS.map(|(a, b)| {
        let (i, j) = (channel_index(a).unwrap(), channel_index(b).unwrap());
        (i.min(j), i.max(j))
    })
}

/// Canonical EEG frequency bands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Band {
    Delta,
    Theta,
    Alpha,
    Beta,
    Gamma,
}

impl Band {
    pub const ALL: [Band; N_BANDS] = [Band::Delta, Band::Theta, Band::Alpha, Band::Beta, Band::Gamma];

    pub fn name(self) -> &'static str {
        match self {
            Band::Delta => "delta",
            Band::Theta => "theta",
            Band::Alpha => "alpha",
            Band::Beta => "beta",
            Band::Gamma => "gamma",
        }
    }

    /// Band limits in Hz. Intervals are half-open `[lo, hi)` except gamma,
    /// which is closed at its upper edge.
    pub fn limits(self) -> (f64, f64) {
        match self {
            Band::Delta => (0.5, 4.0),
            Band::Theta => (4.0, 8.0),
            Band::Alpha => (8.0, 13.0),
            Band::Beta => (13.0, 32.0),
            Band::Gamma => (32.0, 50.0),
        }
    }

    pub fn contains(self, freq_hz: f64) -> bool {
        let (lo, hi) = self.limits();
        match self {
            Band::Gamma => freq_hz >= lo && freq_hz <= hi,
            _ => freq_hz >= lo && freq_hz < hi,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Band {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Band::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| format!("unknown band `{s}`"))
    }
}

/// Lowest and highest frequency covered by the band table.
pub const PASSBAND_HZ: (f64, f64) = (0.5, 50.0);

/// Whether a frequency falls inside the union of all bands.
pub fn in_passband(freq_hz: f64) -> bool {
    Band::ALL.iter().any(|b| b.contains(freq_hz))
}

const COORDS_CSV: &str = include_str!("../fixtures/montage_coords.csv");

/// Standard 10/20 unit-sphere electrode positions for [`CHANNELS`], in
/// montage order.
pub fn electrode_coordinates() -> [[f64; 3]; N_CHANNELS] {
    let mut out = [[0.0; 3]; N_CHANNELS];
    for line in COORDS_CSV.lines().skip(1).filter(|l| !l.trim().is_empty()) {
        let mut it = line.split(',');
        let name = it.next().unwrap();
        let idx = channel_index(name).expect("fixture channel in montage");
        for (k, v) in it.enumerate() {
            out[idx][k] = v.trim().parse().expect("fixture coordinate");
        }
    }
    out
}
