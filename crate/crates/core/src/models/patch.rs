use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Geometry of the window-to-patch reshape: a `C x L x A` window becomes
/// `N` rows of `C * L_p * A_p` values.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchConfig {
    /// Window length in frames.
    pub length: usize,
    /// Sensor axes per frame.
    pub axes: usize,
    pub channels: usize,
    pub patch_length: usize,
    pub patch_axes: usize,
}

impl Default for PatchConfig {
    fn default() -> Self {
        PatchConfig {
            length: 50,
            axes: 9,
            channels: 1,
            patch_length: 10,
            patch_axes: 3,
        }
    }
}

impl PatchConfig {
    pub fn validate(&self) -> Result<()> {
        let all_positive = [
            self.length,
            self.axes,
            self.channels,
            self.patch_length,
            self.patch_axes,
        ]
        .iter()
        .all(|&v| v > 0);
        if !all_positive || !self.length.is_multiple_of(self.patch_length) || !self.axes.is_multiple_of(self.patch_axes)
        {
            return Err(Error::invalid(
                "patch",
                format!(
                    "patch {}x{} must tile a {}x{} window",
                    self.patch_length, self.patch_axes, self.length, self.axes
                ),
            ));
        }
        Ok(())
    }

    pub fn num_patches(&self) -> usize {
        (self.length / self.patch_length) * (self.axes / self.patch_axes)
    }

    pub fn patch_dim(&self) -> usize {
        self.channels * self.patch_length * self.patch_axes
    }

    pub fn window_len(&self) -> usize {
        self.channels * self.length * self.axes
    }

    /// For each output slot (patch-major), the index into the window.
    fn gather_map(&self) -> impl Iterator<Item = usize> + '_ {
        let groups = self.axes / self.patch_axes;
        (0..self.num_patches()).flat_map(move |p| {
            let (tb, ab) = (p / groups, p % groups);
            (0..self.channels).flat_map(move |c| {
                (0..self.patch_length).flat_map(move |lt| {
                    (0..self.patch_axes).map(move |la| {
                        let t = tb * self.patch_length + lt;
                        let a = ab * self.patch_axes + la;
                        (c * self.length + t) * self.axes + a
                    })
                })
            })
        })
    }
}

/// Splits a time-major window into patch rows, time blocks outermost and
/// axis groups within them.
pub fn patchify<T: Copy>(window: &[T], cfg: &PatchConfig) -> Result<Vec<T>> {
    cfg.validate()?;
    if window.len() != cfg.window_len() {
        return Err(Error::shape(
            "patchify",
            format!("window has {} values, expected {}", window.len(), cfg.window_len()),
        ));
    }
    Ok(cfg.gather_map().map(|i| window[i]).collect())
}

/// Inverse of [`patchify`].
pub fn unpatchify<T: Copy + Default>(patches: &[T], cfg: &PatchConfig) -> Result<Vec<T>> {
    cfg.validate()?;
    if patches.len() != cfg.window_len() {
        return Err(Error::shape("unpatchify", format!("{} values", patches.len())));
    }
    let mut window = vec![T::default(); cfg.window_len()];
    for (src, dst) in cfg.gather_map().enumerate() {
        window[dst] = patches[src];
    }
    Ok(window)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_geometry() {
        let cfg = PatchConfig::default();
        assert_eq!(cfg.num_patches(), 15);
        assert_eq!(cfg.patch_dim(), 30);
    }

    #[test]
    fn single_patch_is_flattened_window() {
        let cfg = PatchConfig {
            length: 10,
            axes: 3,
            ..PatchConfig::default()
        };
        let w: Vec<u32> = (0..30).collect();
        assert_eq!(patchify(&w, &cfg).unwrap(), w);
    }

    #[test]
    fn first_patch_holds_first_time_block_and_axis_group() {
        let cfg = PatchConfig::default();
        let w: Vec<u32> = (0..450).collect();
        let p = patchify(&w, &cfg).unwrap();
        assert_eq!(&p[..6], &[0, 1, 2, 9, 10, 11]);
        // patch 1 = same time block, axes 3..6
        assert_eq!(&p[30..33], &[3, 4, 5]);
        // patch 3 = second time block
        assert_eq!(p[90], 90);
    }

    #[test]
    fn rejects_non_tiling_patches() {
        let cfg = PatchConfig {
            patch_length: 7,
            ..PatchConfig::default()
        };
        assert!(patchify(&[0.0f32; 450], &cfg).is_err());
        assert!(patchify(&[0.0f32; 449], &PatchConfig::default()).is_err());
    }
}
