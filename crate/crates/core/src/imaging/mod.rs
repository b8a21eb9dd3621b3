//! Raster handling and superpixel construction.

mod color;
mod merge;
mod raster;
mod slic;
mod stain;
mod superpixel;

pub use color::{
    region_color_features, ChannelHistogram, ColorFeatureVector, RegionColorStats, COLOR_FEATURE_DIM,
};
pub use merge::{hierarchical_merge, merge_distance};
pub use raster::RasterImage;
pub use slic::{slic, SlicParams};
pub use stain::{normalize_stain, ChannelStats, StainNormalizer, StatisticsMatcher};
pub use superpixel::SuperpixelMap;
